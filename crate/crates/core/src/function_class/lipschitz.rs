//! Lipschitz constants of realized networks and of the parameterization.

use serde::{Deserialize, Serialize};

use rand::Rng;
use rand_distr::StandardNormal;

use super::{FunctionClass, Network};
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::StreamRng;

/// Power-iteration limit per layer before falling back to Frobenius norms.
pub const POWER_ITERATIONS: usize = 1000;
const POWER_TOL: f64 = 1e-10;
/// Relative inflation applied to the certified product to absorb rounding.
const CERT_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzUpper {
    /// Certified upper bound on the Lipschitz constant of the network.
    pub value: f64,
    /// Per-layer operator-norm bounds used in the product.
    pub layer_norms: Vec<f64>,
    pub head_factor: f64,
    pub iterations: Vec<usize>,
    /// Set when some layer's power iteration did not converge and its
    /// Frobenius norm was used instead.
    pub frobenius_fallback: bool,
}

/// Product of layer operator norms times the head constant.
///
/// Each layer's norm is the larger of the power-iteration estimate and a
/// dense SVD, so a slowly converging iteration cannot under-report. Layers
/// whose iteration does not settle within [`POWER_ITERATIONS`] use the
/// Frobenius norm, which always dominates the spectral norm.
pub fn lipschitz_upper_bound(net: &Network<'_>) -> LipschitzUpper {
    let class = net.class();
    let mut layer_norms = Vec::with_capacity(class.layers());
    let mut iterations = Vec::with_capacity(class.layers());
    let mut fallback = false;
    for l in 0..class.layers() {
        let (w, _) = net.layer(l);
        let (rows, cols) = (class.arch[l + 1], class.arch[l]);
        let s = linalg::spectral_norm(w, rows, cols, POWER_ITERATIONS, POWER_TOL);
        iterations.push(s.iterations);
        let norm = if s.converged {
            s.value.max(linalg::max_singular_value(w, rows, cols))
        } else {
            fallback = true;
            linalg::frobenius(w)
        };
        layer_norms.push(norm);
    }
    let head_factor = class.head().lipschitz();
    let value = layer_norms.iter().product::<f64>() * head_factor * (1.0 + CERT_SLACK);
    LipschitzUpper {
        value,
        layer_norms,
        head_factor,
        iterations,
        frobenius_fallback: fallback,
    }
}

/// Largest observed `||f(x) - f(x')|| / ||x - x'||` over probe pairs.
///
/// Each probe point is an anchor (cycled) plus a small jitter, or a uniform
/// draw from the input ball when `anchors` is empty. Two pairs are formed per
/// probe: a short step along the top right singular vector of the local
/// Jacobian, and a longer step in a random direction. Every ratio comes from
/// actual evaluations, so the maximum never exceeds the true constant.
pub fn lipschitz_lower_bound(
    net: &Network<'_>,
    anchors: &[Vec<f64>],
    probes: usize,
    rng: &mut StreamRng,
) -> Result<f64> {
    if probes < 100 {
        return Err(Error::InsufficientSamples {
            needed: 100,
            got: probes,
        });
    }
    let class = net.class();
    let d = class.d();
    let k = class.k();
    let jitter = 0.01 / (d as f64).sqrt();
    let mut best: f64 = 0.0;
    for i in 0..probes {
        let x: Vec<f64> = if anchors.is_empty() {
            class.random_input(rng)
        } else {
            anchors[i % anchors.len()]
                .iter()
                .map(|v| {
                    let z: f64 = rng.sample(StandardNormal);
                    v + jitter * z
                })
                .collect()
        };
        let fx = net.eval(&x);
        let jac = net.jacobian(&x);
        let (sigma, u) = linalg::top_singular_pair(&jac, k, d, 50);
        let scale = 1.0 + linalg::norm(&x);
        if sigma > 0.0 {
            let h = 1e-4 * scale;
            let xp: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a + h * b).collect();
            best = best.max(pair_ratio(net, &x, &fx, &xp));
        }
        let dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let dn = linalg::norm(&dir).max(1e-300);
        let step = 0.1 * scale / dn;
        let xp: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + step * b).collect();
        best = best.max(pair_ratio(net, &x, &fx, &xp));
    }
    Ok(best)
}

fn pair_ratio(net: &Network<'_>, x: &[f64], fx: &[f64], xp: &[f64]) -> f64 {
    let dx = linalg::dist(x, xp);
    if dx == 0.0 {
        return 0.0;
    }
    linalg::dist(fx, &net.eval(xp)) / dx
}

/// Sampled estimate of the parameterization constant `J`:
/// `max ||tau(w1)(x) - tau(w2)(x)|| / ||w1 - w2||` over random parameter
/// pairs and inputs in the certified ball. Half of the pairs are local
/// perturbations, which tend to realize larger ratios.
pub fn parameterization_lipschitz_estimate(
    class: &FunctionClass,
    trials: usize,
    rng: &mut StreamRng,
) -> Result<f64> {
    if trials < 100 {
        return Err(Error::InsufficientSamples {
            needed: 100,
            got: trials,
        });
    }
    if class.diameter() == 0.0 {
        return Ok(0.0);
    }
    let mut best: f64 = 0.0;
    for t in 0..trials {
        let w1 = class.random_params(rng);
        let w2 = if t % 2 == 0 {
            class.random_params(rng)
        } else {
            let mut w: Vec<f64> = w1
                .iter()
                .map(|v| {
                    let z: f64 = rng.sample(StandardNormal);
                    v + 1e-3 * z
                })
                .collect();
            class.project(&mut w);
            w
        };
        let dw = linalg::dist(&w1, &w2);
        if dw == 0.0 {
            continue;
        }
        let x = class.random_input(rng);
        let f1 = class.realize(&w1)?;
        let f2 = class.realize(&w2)?;
        best = best.max(linalg::dist(&f1.eval(&x), &f2.eval(&x)) / dw);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::function_class::Head;
    use crate::rng;

    const WIDE: Head = Head::Clip { m: 1e6, smooth: false };

    #[test]
    fn scaled_identity_layer() {
        let c = FunctionClass::new(vec![3, 3], vec![5.0], WIDE, 1.0).unwrap();
        let mut w = vec![0.0; c.p()];
        for i in 0..3 {
            w[i * 3 + i] = 2.0;
        }
        let f = c.realize(&w).unwrap();
        let ub = lipschitz_upper_bound(&f);
        assert!((ub.value - 2.0).abs() < 1e-8);
        assert!(!ub.frobenius_fallback);
        let lb = lipschitz_lower_bound(&f, &[], 100, &mut rng::stream(0, 0)).unwrap();
        assert!(lb <= ub.value && lb > 2.0 - 1e-6, "{lb}");
    }

    #[test]
    fn two_diagonal_layers() {
        let c = FunctionClass::new(vec![2, 2, 2], vec![5.0], WIDE, 1.0).unwrap();
        let mut w = vec![0.0; c.p()];
        w[0] = 3.0;
        w[3] = 3.0;
        w[4] = 5.0; // positive biases keep the ReLUs active on the unit ball
        w[5] = 5.0;
        w[6] = 2.0;
        w[9] = 2.0;
        let f = c.realize(&w).unwrap();
        let ub = lipschitz_upper_bound(&f).value;
        assert!(ub <= 6.0 + 1e-8 && ub >= 6.0 - 1e-8);
        let lb = lipschitz_lower_bound(&f, &[], 200, &mut rng::stream(1, 0)).unwrap();
        assert!((lb - 6.0).abs() < 1e-6, "{lb}");
    }

    #[test]
    fn zero_weights_have_zero_constant() {
        let c = FunctionClass::new(vec![4, 6, 2], vec![1.0], WIDE, 1.0).unwrap();
        let f = c.realize(&vec![0.0; c.p()]).unwrap();
        assert_eq!(lipschitz_upper_bound(&f).value, 0.0);
        assert_eq!(lipschitz_lower_bound(&f, &[], 100, &mut rng::stream(0, 0)).unwrap(), 0.0);
    }

    #[test]
    fn single_layer_parameterization() {
        let c = FunctionClass::new(vec![3, 2], vec![1.0], WIDE, 2.0).unwrap();
        let j = parameterization_lipschitz_estimate(&c, 2000, &mut rng::stream(0, 0)).unwrap();
        assert!(j <= c.j_cert() && c.j_cert() <= 3.0, "{j} {}", c.j_cert());
        assert!(j > 0.0);
    }

    #[test]
    fn degenerate_box_gives_zero() {
        let c = FunctionClass::new(vec![3, 2], vec![0.0], WIDE, 2.0).unwrap();
        assert_eq!(parameterization_lipschitz_estimate(&c, 100, &mut rng::stream(0, 0)).unwrap(), 0.0);
    }

    #[test]
    fn deep_parameterization_below_certificate() {
        let c = FunctionClass::new(vec![4, 8, 8, 2], vec![0.5], Head::Softmax { m: 3.0 }, 1.5).unwrap();
        let j = parameterization_lipschitz_estimate(&c, 1000, &mut rng::stream(5, 0)).unwrap();
        assert!(j <= c.j_cert());
    }
}
