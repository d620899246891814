//! Covering numbers of the parameter box and materialized grid nets.

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::FunctionClass;
use crate::error::{Error, Result};
use crate::rng::StreamRng;

pub const DEFAULT_NET_BUDGET: usize = 1_000_000;

/// Exact evaluation is skipped once `(1 + 2W/eps')^p` needs more bits.
const EXACT_BIT_LIMIT: u64 = 1 << 22;

/// Size bound `(1 + 2W/eps')^p` for an `eps'`-net of a parameter set of
/// diameter `W` in `R^p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSize {
    /// Natural logarithm of the bound.
    pub log_value: f64,
    /// `floor` of the bound, when small enough to evaluate exactly.
    #[serde(with = "opt_biguint")]
    pub floor: Option<BigUint>,
    /// Whether the bound is an integer (floor and ceiling agree).
    pub exact_integer: bool,
}

impl NetSize {
    /// Largest integer not exceeding the bound; this many centers suffice.
    pub fn count(&self) -> Option<&BigUint> {
        self.floor.as_ref()
    }

    pub fn ceil(&self) -> Option<BigUint> {
        self.floor.as_ref().map(|f| {
            if self.exact_integer {
                f.clone()
            } else {
                f + 1u32
            }
        })
    }
}

mod opt_biguint {
    use num_bigint::BigUint;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<BigUint>, s: S) -> Result<S::Ok, S::Error> {
        v.as_ref().map(|b| b.to_string()).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<BigUint>, D::Error> {
        Option::<String>::deserialize(d)?
            .map(|s| s.parse().map_err(serde::de::Error::custom))
            .transpose()
    }
}

/// Evaluates `(1 + 2W/eps')^p` in exact rational arithmetic on the binary
/// values of `W` and `eps'`.
pub fn epsilon_net_size(w: f64, p: usize, eps_prime: f64) -> Result<NetSize> {
    if !(w >= 0.0 && w.is_finite()) || !(eps_prime > 0.0 && eps_prime.is_finite()) {
        return Err(Error::invalid(format!(
            "net size needs W >= 0 and eps' > 0, got W = {w}, eps' = {eps_prime}"
        )));
    }
    if p == 0 {
        return Ok(NetSize {
            log_value: 0.0,
            floor: Some(BigUint::one()),
            exact_integer: true,
        });
    }
    let log_value = p as f64 * (2.0 * w / eps_prime).ln_1p();
    let wr = BigRational::from_float(w).expect("finite");
    let er = BigRational::from_float(eps_prime).expect("finite");
    let two = BigRational::from_integer(2.into());
    let base = BigRational::one() + two * wr / er;
    let num_bits = base.numer().bits().max(base.denom().bits());
    if num_bits.saturating_mul(p as u64) > EXACT_BIT_LIMIT {
        return Ok(NetSize {
            log_value,
            floor: None,
            exact_integer: false,
        });
    }
    let pe = u32::try_from(p).expect("checked against the bit limit");
    let num = base.numer().to_biguint().expect("positive").pow(pe);
    let den = base.denom().to_biguint().expect("positive").pow(pe);
    Ok(NetSize {
        log_value,
        floor: Some(&num / &den),
        exact_integer: (&num % &den).is_zero(),
    })
}

/// Axis-aligned grid net of a box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetOfFunctions {
    pub center_params: Vec<Vec<f64>>,
    /// Covering radius in parameter space.
    pub param_radius: f64,
    /// Covering radius in sup-norm over functions, `J * param_radius`.
    pub radius: f64,
    pub count: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    spacing: f64,
}

impl NetOfFunctions {
    /// Nearest center to `w` (coordinate-wise rounding onto the grid) and its
    /// distance.
    pub fn nearest(&self, w: &[f64]) -> (Vec<f64>, f64) {
        let c: Vec<f64> = if self.count == 1 && self.center_params.len() == 1 {
            self.center_params[0].clone()
        } else {
            w.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .map(|(&v, (&lo, &hi))| {
                    if hi <= lo {
                        return lo;
                    }
                    let j = ((v - lo) / self.spacing).round().max(0.0);
                    (lo + j * self.spacing).min(hi)
                })
                .collect()
        };
        let dist = crate::linalg::dist(w, &c);
        (c, dist)
    }

    /// Fraction of `probes` uniform points of the box within `param_radius`
    /// of the net.
    pub fn verify_cover(&self, probes: usize, rng: &mut StreamRng) -> f64 {
        let mut hits = 0usize;
        for _ in 0..probes {
            let w: Vec<f64> = self
                .lo
                .iter()
                .zip(&self.hi)
                .map(|(&lo, &hi)| if hi > lo { rng.random_range(lo..=hi) } else { lo })
                .collect();
            if self.nearest(&w).1 <= self.param_radius {
                hits += 1;
            }
        }
        hits as f64 / probes.max(1) as f64
    }
}

/// Grid net of the box `[lo, hi]` at covering radius `eps'`.
///
/// The spacing is `eps'/sqrt(p)`, so rounding each coordinate moves a point
/// by at most half a spacing and the Euclidean error stays below `eps'/2`.
/// When `eps'` reaches the diameter a single midpoint is returned.
pub fn grid_net_for_box(lo: &[f64], hi: &[f64], eps_prime: f64, lipschitz: f64, budget: usize) -> Result<NetOfFunctions> {
    if lo.len() != hi.len() {
        return Err(Error::DimensionMismatch {
            expected: lo.len(),
            got: hi.len(),
        });
    }
    if !(eps_prime > 0.0) {
        return Err(Error::invalid("net radius must be positive"));
    }
    let p = lo.len();
    let diameter = lo
        .iter()
        .zip(hi)
        .map(|(a, b)| (b - a) * (b - a))
        .sum::<f64>()
        .sqrt();
    if eps_prime >= diameter {
        let mid: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
        return Ok(NetOfFunctions {
            center_params: vec![mid.clone()],
            param_radius: eps_prime,
            radius: lipschitz * eps_prime,
            count: 1,
            lo: mid.clone(),
            hi: mid,
            spacing: f64::INFINITY,
        });
    }
    let spacing = eps_prime / (p as f64).sqrt();
    let axis: Vec<usize> = lo
        .iter()
        .zip(hi)
        .map(|(a, b)| {
            if b > a {
                ((b - a) / spacing).ceil() as usize + 1
            } else {
                1
            }
        })
        .collect();
    let required: f64 = axis.iter().map(|&n| n as f64).product();
    if required > budget as f64 {
        return Err(Error::NetBudgetExceeded { required, budget });
    }
    let count = required as usize;
    let mut centers = Vec::with_capacity(count);
    let mut idx = vec![0usize; p];
    for _ in 0..count {
        centers.push(
            idx.iter()
                .zip(lo.iter().zip(hi))
                .map(|(&j, (&a, &b))| (a + j as f64 * spacing).min(b))
                .collect(),
        );
        for (i, n) in idx.iter_mut().zip(&axis) {
            *i += 1;
            if *i < *n {
                break;
            }
            *i = 0;
        }
    }
    Ok(NetOfFunctions {
        center_params: centers,
        param_radius: eps_prime,
        radius: lipschitz * eps_prime,
        count,
        lo: lo.to_vec(),
        hi: hi.to_vec(),
        spacing,
    })
}

/// Grid net of the class's parameter box; its image is a `J eps'`-net of the
/// class in sup-norm over the certified input ball.
pub fn build_grid_net(class: &FunctionClass, eps_prime: f64, budget: usize) -> Result<NetOfFunctions> {
    let (lo, hi): (Vec<f64>, Vec<f64>) = (0..class.p()).map(|i| class.param_bounds(i)).unzip();
    grid_net_for_box(&lo, &hi, eps_prime, class.j_cert(), budget)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::function_class::Head;
    use crate::rng;

    #[test]
    fn net_size_examples() {
        let s = epsilon_net_size(2.0, 3, 1.0).unwrap();
        assert_eq!(s.count(), Some(&BigUint::from(125u32)));
        assert_eq!(s.ceil(), Some(BigUint::from(125u32)));
        assert!((s.log_value - 125f64.ln()).abs() < 1e-12);

        let tiny = epsilon_net_size(1.0, 5, 2e6).unwrap();
        assert_eq!(tiny.count(), Some(&BigUint::one()));

        let empty = epsilon_net_size(3.0, 0, 0.1).unwrap();
        assert_eq!(empty.count(), Some(&BigUint::one()));
    }

    #[test]
    fn huge_nets_keep_the_log() {
        let s = epsilon_net_size(100.0, 5_000_000, 1e-3).unwrap();
        assert!(s.floor.is_none());
        assert!((s.log_value - 5e6 * 200_001f64.ln()).abs() < 1e-3);
    }

    #[test]
    fn unit_interval_grid() {
        let net = grid_net_for_box(&[0.0], &[1.0], 0.5, 1.0, DEFAULT_NET_BUDGET).unwrap();
        assert_eq!(net.center_params, vec![vec![0.0], vec![0.5], vec![1.0]]);
        assert_eq!(net.verify_cover(1000, &mut rng::stream(0, 0)), 1.0);
        let net = grid_net_for_box(&[0.0, -1.0], &[1.0, 1.0], 3.0, 1.0, DEFAULT_NET_BUDGET).unwrap();
        assert_eq!(net.center_params, vec![vec![0.5, 0.0]]);
        assert_eq!(net.verify_cover(1000, &mut rng::stream(0, 0)), 1.0);
    }

    #[test]
    fn square_grid_covers() {
        let net = grid_net_for_box(&[0.0, 0.0], &[1.0, 1.0], 0.5, 1.0, DEFAULT_NET_BUDGET).unwrap();
        assert!((net.spacing - 0.5 / 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(net.verify_cover(1000, &mut rng::stream(0, 1)), 1.0);
    }

    #[test]
    fn budget_is_enforced() {
        let c = crate::function_class::FunctionClass::new(
            vec![4, 4],
            vec![1.0],
            Head::Clip { m: 1.0, smooth: false },
            1.0,
        )
        .unwrap();
        match build_grid_net(&c, 0.1, 1000) {
            Err(Error::NetBudgetExceeded { required, budget }) => {
                assert!(required > 1000.0);
                assert_eq!(budget, 1000);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn class_net_respects_box_and_size_bound() {
        let c = crate::function_class::FunctionClass::new(
            vec![1, 2],
            vec![0.5],
            Head::Clip { m: 1.0, smooth: false },
            1.0,
        )
        .unwrap();
        let eps = 0.3;
        let net = build_grid_net(&c, eps, DEFAULT_NET_BUDGET).unwrap();
        assert!(net.center_params.iter().all(|w| c.contains(w)));
        let bound = (1.0 + 2.0 * c.diameter() / eps).powi(c.p() as i32);
        assert!((net.count as f64) <= bound);
        assert_eq!(net.verify_cover(1000, &mut rng::stream(2, 0)), 1.0);
    }
}
