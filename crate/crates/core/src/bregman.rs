//! Bregman divergence losses.
//!
//! Four generator families are supported: the squared norm, the Mahalanobis
//! quadratic `y^T A y`, negative entropy on the probability simplex (KL and
//! cross-entropy) and the binary entropy on `[0, 1]` (logistic loss). Each
//! [`LossSpec`] carries its domain and knows the regularity constants that
//! the lower-bound machinery consumes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

const SUM_TOL: f64 = 1e-9;
const BOX_TOL: f64 = 1e-12;

/// Compact convex regions used for `Omega`, the conditional-mean region `A`
/// and the range `R` of a function class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "region", rename_all = "snake_case")]
pub enum Region {
    /// `[lo, hi]^K`
    Box { lo: f64, hi: f64 },
    /// Closed probability simplex.
    Simplex,
    /// Simplex points with every coordinate at least `floor`.
    FlooredSimplex { floor: f64 },
}

impl Region {
    pub fn check(&self, y: &[f64]) -> Result<()> {
        match *self {
            Region::Box { lo, hi } => {
                for (i, &v) in y.iter().enumerate() {
                    if !v.is_finite() || v < lo - BOX_TOL || v > hi + BOX_TOL {
                        return Err(Error::domain(Some(i), v, "outside box"));
                    }
                }
                Ok(())
            }
            Region::Simplex => check_simplex(y, 0.0),
            Region::FlooredSimplex { floor } => check_simplex(y, floor),
        }
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        self.check(y).is_ok()
    }

    /// Largest absolute coordinate difference between two points of the region.
    pub fn linf_diameter(&self, k: usize) -> f64 {
        match *self {
            Region::Box { lo, hi } => hi - lo,
            Region::Simplex => 1.0,
            Region::FlooredSimplex { floor } => {
                if k == 1 {
                    0.0
                } else {
                    1.0 - k as f64 * floor
                }
            }
        }
    }
}

fn check_simplex(y: &[f64], floor: f64) -> Result<()> {
    for (i, &v) in y.iter().enumerate() {
        if !v.is_finite() || v < floor - BOX_TOL {
            return Err(Error::domain(Some(i), v, "below simplex floor"));
        }
    }
    let s: f64 = y.iter().sum();
    if (s - 1.0).abs() > SUM_TOL {
        return Err(Error::domain(None, s, "coordinates do not sum to one"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub omega: Region,
    pub a_region: Region,
    pub r_region: Region,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LossKind {
    Square,
    /// Row-major positive-definite `K x K` matrix.
    Mahalanobis { matrix: Vec<f64> },
    NegEntropy,
    BinaryEntropy,
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Square => "square",
            LossKind::Mahalanobis { .. } => "mahalanobis",
            LossKind::NegEntropy => "neg_entropy",
            LossKind::BinaryEntropy => "binary_entropy",
        }
    }
}

/// Box half-width / logit bound `m` and label floor `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    pub m: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub k: usize,
    pub params: LossParams,
    pub domain: DomainSpec,
    /// Eigenvalues of the Mahalanobis matrix, ascending; empty otherwise.
    #[serde(skip)]
    eigenvalues: Vec<f64>,
}

fn check_m(m: f64) -> Result<()> {
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::domain(None, m, "box half-width M must be positive"));
    }
    Ok(())
}

/// Sigmoid, written to stay accurate for large negative arguments.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LossSpec {
    pub fn square(k: usize, m: f64) -> Result<Self> {
        check_m(m)?;
        if k == 0 {
            return Err(Error::invalid("K must be positive"));
        }
        let b = Region::Box { lo: -m, hi: m };
        Ok(LossSpec {
            kind: LossKind::Square,
            k,
            params: LossParams { m, alpha: 0.0 },
            domain: DomainSpec {
                omega: b,
                a_region: b,
                r_region: b,
            },
            eigenvalues: Vec::new(),
        })
    }

    pub fn mahalanobis(matrix: Vec<f64>, k: usize, m: f64) -> Result<Self> {
        check_m(m)?;
        if k == 0 || matrix.len() != k * k {
            return Err(Error::DimensionMismatch {
                expected: k * k,
                got: matrix.len(),
            });
        }
        for i in 0..k {
            for j in 0..i {
                let (a, b) = (matrix[i * k + j], matrix[j * k + i]);
                if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                    return Err(Error::invalid(format!(
                        "Mahalanobis matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let eigenvalues = linalg::symmetric_eigenvalues(&matrix, k);
        if eigenvalues[0] <= 0.0 {
            return Err(Error::invalid(format!(
                "Mahalanobis matrix is not positive definite (smallest eigenvalue {})",
                eigenvalues[0]
            )));
        }
        let b = Region::Box { lo: -m, hi: m };
        Ok(LossSpec {
            kind: LossKind::Mahalanobis { matrix },
            k,
            params: LossParams { m, alpha: 0.0 },
            domain: DomainSpec {
                omega: b,
                a_region: b,
                r_region: b,
            },
            eigenvalues,
        })
    }

    /// KL / cross-entropy on the `K`-simplex. The class range is the softmax
    /// image of `[-m, m]^K`, contained in the simplex with floor `e^{-2m}/K`.
    pub fn neg_entropy(k: usize, m: f64, alpha: f64) -> Result<Self> {
        check_m(m)?;
        if k < 2 {
            return Err(Error::invalid("negative entropy needs K >= 2"));
        }
        if !(alpha > 0.0) || alpha * k as f64 > 1.0 + 1e-15 {
            return Err(Error::domain(None, alpha, "label floor alpha must lie in (0, 1/K]"));
        }
        let floor = (-2.0 * m).exp() / k as f64;
        Ok(LossSpec {
            kind: LossKind::NegEntropy,
            k,
            params: LossParams { m, alpha },
            domain: DomainSpec {
                omega: Region::Simplex,
                a_region: Region::FlooredSimplex { floor: alpha },
                r_region: Region::FlooredSimplex { floor },
            },
            eigenvalues: Vec::new(),
        })
    }

    /// Logistic loss on `[0, 1]`. The class range is the sigmoid image of
    /// `[-m, m]`.
    pub fn binary_entropy(m: f64, alpha: f64) -> Result<Self> {
        check_m(m)?;
        if !(alpha > 0.0) || alpha > 0.5 {
            return Err(Error::domain(None, alpha, "label floor alpha must lie in (0, 1/2]"));
        }
        let s = sigmoid(-m);
        Ok(LossSpec {
            kind: LossKind::BinaryEntropy,
            k: 1,
            params: LossParams { m, alpha },
            domain: DomainSpec {
                omega: Region::Box { lo: 0.0, hi: 1.0 },
                a_region: Region::Box {
                    lo: alpha,
                    hi: 1.0 - alpha,
                },
                r_region: Region::Box { lo: s, hi: 1.0 - s },
            },
            eigenvalues: Vec::new(),
        })
    }

    /// Overrides the simplex floor of the class range (negative entropy only).
    pub fn with_floor(mut self, floor: f64) -> Result<Self> {
        match self.kind {
            LossKind::NegEntropy => {
                if !(floor > 0.0) || floor * self.k as f64 > 1.0 {
                    return Err(Error::domain(None, floor, "simplex floor must lie in (0, 1/K]"));
                }
                self.domain.r_region = Region::FlooredSimplex { floor };
                Ok(self)
            }
            _ => Err(Error::invalid("a simplex floor only applies to neg_entropy")),
        }
    }

    fn check_dim(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.k {
            return Err(Error::DimensionMismatch {
                expected: self.k,
                got: y.len(),
            });
        }
        Ok(())
    }

    fn check_omega(&self, y: &[f64]) -> Result<()> {
        self.check_dim(y)?;
        self.domain.omega.check(y)
    }

    /// Points where the gradient exists: all of `Omega` for the quadratic
    /// losses, strictly positive coordinates for the entropies.
    fn check_interior(&self, y: &[f64]) -> Result<()> {
        self.check_omega(y)?;
        match self.kind {
            LossKind::NegEntropy => {
                for (i, &v) in y.iter().enumerate() {
                    if v <= 0.0 {
                        return Err(Error::domain(Some(i), v, "not strictly inside the simplex"));
                    }
                }
            }
            LossKind::BinaryEntropy => {
                if !(y[0] > 0.0 && y[0] < 1.0) {
                    return Err(Error::domain(Some(0), y[0], "not strictly inside (0, 1)"));
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn matrix(&self) -> Option<&[f64]> {
        match &self.kind {
            LossKind::Mahalanobis { matrix } => Some(matrix),
            _ => None,
        }
    }

    /// Largest eigenvalue of the Mahalanobis matrix.
    pub fn lambda_max(&self) -> Option<f64> {
        self.eigenvalues.last().copied()
    }

    /// The generator `phi(y)`.
    pub fn phi(&self, y: &[f64]) -> Result<f64> {
        self.check_omega(y)?;
        Ok(match &self.kind {
            LossKind::Square => linalg::dot(y, y),
            LossKind::Mahalanobis { matrix } => {
                linalg::dot(y, &linalg::matvec(matrix, self.k, self.k, y))
            }
            LossKind::NegEntropy => y.iter().map(|&v| xlogx(v)).sum(),
            LossKind::BinaryEntropy => xlogx(y[0]) + xlogx(1.0 - y[0]),
        })
    }

    /// `grad phi(y)`.
    pub fn gradient(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_interior(y)?;
        Ok(match &self.kind {
            LossKind::Square => y.iter().map(|v| 2.0 * v).collect(),
            LossKind::Mahalanobis { matrix } => linalg::matvec(matrix, self.k, self.k, y)
                .into_iter()
                .map(|v| 2.0 * v)
                .collect(),
            LossKind::NegEntropy => y.iter().map(|v| v.ln() + 1.0).collect(),
            LossKind::BinaryEntropy => vec![(y[0] / (1.0 - y[0])).ln()],
        })
    }

    /// `D(y1, y2) = phi(y1) - phi(y2) - <grad phi(y2), y1 - y2>`, evaluated
    /// through each family's closed form.
    ///
    /// For negative entropy the first argument may sit on the simplex
    /// boundary (one-hot labels); with `0 log 0 = 0` the closed form is the
    /// cross-entropy `-sum 1{y1_i = 1} log y2_i`.
    pub fn divergence(&self, y1: &[f64], y2: &[f64]) -> Result<f64> {
        self.check_omega(y1)?;
        self.check_interior(y2)?;
        Ok(match &self.kind {
            LossKind::Square => y1.iter().zip(y2).map(|(a, b)| (a - b) * (a - b)).sum(),
            LossKind::Mahalanobis { matrix } => {
                let diff = linalg::sub(y1, y2);
                linalg::dot(&diff, &linalg::matvec(matrix, self.k, self.k, &diff))
            }
            LossKind::NegEntropy => y1
                .iter()
                .zip(y2)
                .map(|(&p, &q)| rel_entropy_term(p, q))
                .sum(),
            LossKind::BinaryEntropy => {
                rel_entropy_term(y1[0], y2[0]) + rel_entropy_term(1.0 - y1[0], 1.0 - y2[0])
            }
        })
    }

    /// Gradient of `D(y, yhat)` with respect to the prediction `yhat`,
    /// which is `Hess phi(yhat) (yhat - y)`.
    pub fn divergence_grad_pred(&self, y: &[f64], yhat: &[f64]) -> Result<Vec<f64>> {
        self.check_omega(y)?;
        self.check_interior(yhat)?;
        Ok(match &self.kind {
            LossKind::Square => yhat.iter().zip(y).map(|(p, t)| 2.0 * (p - t)).collect(),
            LossKind::Mahalanobis { matrix } => {
                let diff = linalg::sub(yhat, y);
                linalg::matvec(matrix, self.k, self.k, &diff)
                    .into_iter()
                    .map(|v| 2.0 * v)
                    .collect()
            }
            LossKind::NegEntropy => yhat.iter().zip(y).map(|(p, t)| 1.0 - t / p).collect(),
            LossKind::BinaryEntropy => {
                let (p, t) = (yhat[0], y[0]);
                vec![(p - t) / (p * (1.0 - p))]
            }
        })
    }

    /// `D(x,y) - D(x,z) - D(z,y) + <x - z, grad phi(y) - grad phi(z)>`,
    /// identically zero for every Bregman divergence.
    pub fn triangle_residual(&self, x: &[f64], y: &[f64], z: &[f64]) -> Result<f64> {
        let gy = self.gradient(y)?;
        let gz = self.gradient(z)?;
        let xz = linalg::sub(x, z);
        let gd = linalg::sub(&gy, &gz);
        Ok(self.divergence(x, y)? - self.divergence(x, z)? - self.divergence(z, y)?
            + linalg::dot(&xz, &gd))
    }

    /// Regularity constants of this loss on its domain.
    pub fn constants(&self) -> Result<LossConstants> {
        loss_constants(self)
    }
}

fn xlogx(v: f64) -> f64 {
    if v <= 0.0 {
        0.0
    } else {
        v * v.ln()
    }
}

/// One coordinate of the generalised KL divergence `p log(p/q) - p + q`.
fn rel_entropy_term(p: f64, q: f64) -> f64 {
    if p <= 0.0 {
        q
    } else {
        p * (p / q).ln() - p + q
    }
}

/// Constants entering the concentration bounds and the Lipschitz floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConstants {
    pub k: usize,
    /// l-infinity diameter of `Omega`.
    pub d_omega: f64,
    /// Lipschitz constant of `phi` on the class range.
    pub l_phi: f64,
    /// Per-coordinate Lipschitz constant of `grad phi` on the class range.
    pub l_g: f64,
    /// Sup of `|grad phi(f(x))|` over the class range.
    pub gamma: f64,
    pub m0: f64,
    pub a0: f64,
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub big_m0: f64,
    pub big_m1: f64,
    pub big_m2: f64,
    /// How each constant was obtained.
    pub derivation: String,
}

impl LossConstants {
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        k: usize,
        d_omega: f64,
        l_phi: f64,
        l_g: f64,
        gamma: f64,
        m0: f64,
        a0: f64,
        m1: f64,
        m2: f64,
        m3: f64,
        derivation: String,
    ) -> Self {
        debug_assert!(a0 <= m0 + 1e-15 && m2 <= m1 + 1e-15);
        LossConstants {
            k,
            d_omega,
            l_phi,
            l_g,
            gamma,
            m0,
            a0,
            m1,
            m2,
            m3,
            big_m0: m1 + m2 + m3 * (m0 + a0),
            big_m1: 2.0 * m3 * (m0 + a0),
            big_m2: 6.0 * gamma * (m0 + a0),
            derivation,
        }
    }

    /// Factor `d_Omega L_g K + L_phi + gamma` shared by the net radius and the
    /// perturbation bound.
    pub fn perturbation_factor(&self) -> f64 {
        self.d_omega * self.l_g * self.k as f64 + self.l_phi + self.gamma
    }
}

/// Closed-form constants per loss family.
///
/// * square, box `[-M, M]^K`: `d = 2M`, `L_phi = gamma = m3 = 2 sqrt(K) M`,
///   `L_g = 2`, `m0 = a0 = sqrt(K) M`, `m1 = m2 = K M^2`.
/// * Mahalanobis: the square-loss values scaled by `lambda_max(A)` through
///   the Hessian `2A`.
/// * negative entropy with softmax range floor `e^{-2M}/K` and label floor
///   `alpha`: `d = 1`, `L_phi = gamma = sqrt(K)(1 + 2M + log K)`,
///   `L_g = K e^{2M}`, `m0 = a0 = 1`, `m1 = m2 = log K`,
///   `m3 = sqrt(K)(1 + |log alpha|)`.
/// * binary entropy with sigmoid range `[s, 1-s]`, `s = 1/(1+e^M)`:
///   `d = 1`, `L_phi = gamma = M`, `L_g = 1/(s(1-s))`, `m0 = 1`,
///   `a0 = 1 - alpha`, `m1 = m2 = log 2`, `m3 = log((1-alpha)/alpha)`.
pub fn loss_constants(loss: &LossSpec) -> Result<LossConstants> {
    let LossParams { m, alpha } = loss.params;
    check_m(m)?;
    let k = loss.k;
    let kf = k as f64;
    Ok(match &loss.kind {
        LossKind::Square => {
            let m0 = kf.sqrt() * m;
            LossConstants::assemble(
                k,
                2.0 * m,
                2.0 * kf.sqrt() * m,
                2.0,
                2.0 * kf.sqrt() * m,
                m0,
                m0,
                kf * m * m,
                kf * m * m,
                2.0 * kf.sqrt() * m,
                format!(
                    "square loss on [-{m}, {m}]^{k}: d_Omega = 2M, L_phi = gamma = m3 = 2 sqrt(K) M, \
                     L_g = 2, m0 = a0 = sqrt(K) M, m1 = m2 = K M^2"
                ),
            )
        }
        LossKind::Mahalanobis { .. } => {
            let lam = loss
                .lambda_max()
                .ok_or_else(|| Error::invalid("Mahalanobis spectrum missing"))?;
            let m0 = kf.sqrt() * m;
            let grad = 2.0 * lam * m0;
            LossConstants::assemble(
                k,
                2.0 * m,
                grad,
                2.0 * lam,
                grad,
                m0,
                m0,
                lam * kf * m * m,
                lam * kf * m * m,
                grad,
                format!(
                    "Mahalanobis loss on [-{m}, {m}]^{k} with lambda_max(A) = {lam}: Hessian 2A gives \
                     L_g = 2 lambda_max, L_phi = gamma = m3 = 2 lambda_max m0, m0 = a0 = sqrt(K) M, \
                     m1 = m2 = lambda_max K M^2 (implementation's own derivation)"
                ),
            )
        }
        LossKind::NegEntropy => {
            if !(alpha > 0.0) || alpha * kf > 1.0 + 1e-15 {
                return Err(Error::domain(None, alpha, "alpha K must not exceed 1"));
            }
            let lphi = kf.sqrt() * (1.0 + 2.0 * m + kf.ln());
            LossConstants::assemble(
                k,
                1.0,
                lphi,
                kf * (2.0 * m).exp(),
                lphi,
                1.0,
                1.0,
                kf.ln(),
                kf.ln(),
                kf.sqrt() * (1.0 + alpha.ln().abs()),
                format!(
                    "negative entropy on the {k}-simplex, softmax range floor e^(-2M)/K with M = {m}, \
                     label floor alpha = {alpha}: d_Omega = 1, L_phi = gamma = sqrt(K)(1 + 2M + log K), \
                     L_g = K e^(2M), m0 = a0 = 1, m1 = m2 = log K, m3 = sqrt(K)(1 + |log alpha|)"
                ),
            )
        }
        LossKind::BinaryEntropy => {
            if !(alpha > 0.0) || alpha > 0.5 {
                return Err(Error::domain(None, alpha, "alpha must lie in (0, 1/2]"));
            }
            let s = sigmoid(-m);
            let ln2 = std::f64::consts::LN_2;
            LossConstants::assemble(
                1,
                1.0,
                m,
                1.0 / (s * (1.0 - s)),
                m,
                1.0,
                1.0 - alpha,
                ln2,
                ln2,
                ((1.0 - alpha) / alpha).ln(),
                format!(
                    "binary entropy with sigmoid range [s, 1-s], s = 1/(1+e^M), M = {m}, alpha = {alpha}: \
                     d_Omega = 1, L_phi = gamma = M, L_g = 1/(s(1-s)), m0 = 1, a0 = 1 - alpha, \
                     m1 = m2 = log 2, m3 = log((1-alpha)/alpha) (implementation's own derivation)"
                ),
            )
        }
    })
}

/// Text-config form of a loss (`loss.kind`, `loss.K`, `loss.M`,
/// `loss.alpha`, `loss.matrix`, `loss.floor`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub kind: LossKindName,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "M")]
    pub m: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floor: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKindName {
    Square,
    Mahalanobis,
    NegEntropy,
    BinaryEntropy,
}

impl TryFrom<&LossConfig> for LossSpec {
    type Error = Error;

    fn try_from(c: &LossConfig) -> Result<Self> {
        let alpha = || c.alpha.ok_or_else(|| Error::invalid("loss.alpha is required"));
        let spec = match c.kind {
            LossKindName::Square => LossSpec::square(c.k, c.m)?,
            LossKindName::Mahalanobis => {
                let matrix = c
                    .matrix
                    .clone()
                    .ok_or_else(|| Error::invalid("loss.matrix is required for mahalanobis"))?;
                LossSpec::mahalanobis(matrix, c.k, c.m)?
            }
            LossKindName::NegEntropy => LossSpec::neg_entropy(c.k, c.m, alpha()?)?,
            LossKindName::BinaryEntropy => {
                if c.k != 1 {
                    return Err(Error::invalid("binary_entropy has K = 1"));
                }
                LossSpec::binary_entropy(c.m, alpha()?)?
            }
        };
        match c.floor {
            Some(f) => spec.with_floor(f),
            None => Ok(spec),
        }
    }
}

impl From<&LossSpec> for LossConfig {
    fn from(s: &LossSpec) -> Self {
        let (kind, matrix) = match &s.kind {
            LossKind::Square => (LossKindName::Square, None),
            LossKind::Mahalanobis { matrix } => (LossKindName::Mahalanobis, Some(matrix.clone())),
            LossKind::NegEntropy => (LossKindName::NegEntropy, None),
            LossKind::BinaryEntropy => (LossKindName::BinaryEntropy, None),
        };
        let alpha = matches!(kind, LossKindName::NegEntropy | LossKindName::BinaryEntropy)
            .then_some(s.params.alpha);
        let floor = match (kind, s.domain.r_region) {
            (LossKindName::NegEntropy, Region::FlooredSimplex { floor })
                if floor != (-2.0 * s.params.m).exp() / s.k as f64 =>
            {
                Some(floor)
            }
            _ => None,
        };
        LossConfig {
            kind,
            k: s.k,
            m: s.params.m,
            alpha,
            matrix,
            floor,
        }
    }
}
