//! Bias-variance decomposition of the excess loss `Z - sigma^2` and the
//! mixture split of its last term.
//!
//! For a predictor `f`, a sample `(x, y)` with conditional mean `mu(x)` and a
//! shared estimate `e = E[grad phi(f(X))]`:
//!
//! ```text
//! Z       = D(y, f(x))
//! Phi1    = D(mu, f(x))                      >= 0
//! Phi2    = D(y, mu) - sigma^2
//! Gamma1  =  <y - mu, grad phi(mu)>
//! Gamma2  = -<y - mu, e>
//! Gamma3  = -<y - mu, grad phi(f(x)) - e>
//! Z - sigma^2 = Phi1 + Phi2 + Gamma1 + Gamma2 + Gamma3
//! ```

use serde::{Deserialize, Serialize};

use crate::bregman::LossSpec;
use crate::error::{Error, Result};
use crate::linalg;
use crate::sampler::{DataModel, Sample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionRecord {
    pub z: f64,
    pub phi1: f64,
    pub phi2: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub sigma2: f64,
    pub e_grad_f: Vec<f64>,
    /// `|Z - sigma^2 - sum of terms| / (1 + |Z| + sigma^2 + sum |terms|)`.
    pub residual: f64,
}

impl DecompositionRecord {
    pub fn terms_sum(&self) -> f64 {
        self.phi1 + self.phi2 + self.gamma1 + self.gamma2 + self.gamma3
    }
}

/// Decomposes `Z = D(y, f(x))` for one sample.
pub fn decompose(
    loss: &LossSpec,
    model: &DataModel,
    f: impl Fn(&[f64]) -> Vec<f64>,
    s: &Sample,
    sigma2: f64,
    e_grad_f: &[f64],
) -> Result<DecompositionRecord> {
    let mu = model.conditional_mean(&s.x);
    decompose_with_mean(loss, &f(&s.x), &mu, &s.y, sigma2, e_grad_f)
}

/// Decomposition from a precomputed prediction `fx` and conditional mean `mu`.
pub fn decompose_with_mean(
    loss: &LossSpec,
    fx: &[f64],
    mu: &[f64],
    y: &[f64],
    sigma2: f64,
    e_grad_f: &[f64],
) -> Result<DecompositionRecord> {
    if e_grad_f.len() != loss.k {
        return Err(Error::DimensionMismatch {
            expected: loss.k,
            got: e_grad_f.len(),
        });
    }
    let z = loss.divergence(y, fx)?;
    let phi1 = loss.divergence(mu, fx)?;
    let phi2 = loss.divergence(y, mu)? - sigma2;
    let noise = linalg::sub(y, mu);
    let grad_mu = loss.gradient(mu)?;
    let grad_f = loss.gradient(fx)?;
    let gamma1 = linalg::dot(&noise, &grad_mu);
    let gamma2 = -linalg::dot(&noise, e_grad_f);
    let centered = linalg::sub(&grad_f, e_grad_f);
    let gamma3 = -linalg::dot(&noise, &centered);
    let sum = phi1 + phi2 + gamma1 + gamma2 + gamma3;
    let scale = 1.0
        + z.abs()
        + sigma2.abs()
        + phi1.abs()
        + phi2.abs()
        + gamma1.abs()
        + gamma2.abs()
        + gamma3.abs();
    Ok(DecompositionRecord {
        z,
        phi1,
        phi2,
        gamma1,
        gamma2,
        gamma3,
        sigma2,
        e_grad_f: e_grad_f.to_vec(),
        residual: (z - sigma2 - sum).abs() / scale,
    })
}

/// Monte-Carlo estimates of `E[grad phi(f(X))]`, overall and per component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanGrad {
    pub overall: Vec<f64>,
    pub overall_stderr: Vec<f64>,
    /// `r x K`; empty unless conditioning was requested.
    pub per_component: Vec<Vec<f64>>,
    pub per_component_stderr: Vec<Vec<f64>>,
    pub samples: usize,
    pub seed: u64,
    pub stream: u64,
}

/// Welford accumulator over vectors.
struct VecMoments {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl VecMoments {
    fn new(k: usize) -> Self {
        VecMoments {
            n: 0,
            mean: vec![0.0; k],
            m2: vec![0.0; k],
        }
    }

    fn push(&mut self, v: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), x) in self.mean.iter_mut().zip(&mut self.m2).zip(v) {
            let delta = x - *m;
            *m += delta / n;
            *s += delta * (x - *m);
        }
    }

    fn stderr(&self) -> Vec<f64> {
        if self.n < 2 {
            return vec![0.0; self.mean.len()];
        }
        let n = self.n as f64;
        self.m2.iter().map(|s| (s / (n - 1.0) / n).sqrt()).collect()
    }
}

/// Estimates `E[grad phi(f(X))]` from `n_mc` mixture draws and, when
/// `condition_on_component` is set, `E[grad phi(f(X)) | G = g]` from `n_mc`
/// draws of each component. All draws come from one stream, consumed in
/// that order.
pub fn mean_grad_f(
    loss: &LossSpec,
    model: &DataModel,
    f: impl Fn(&[f64]) -> Vec<f64>,
    n_mc: usize,
    stream: u64,
    condition_on_component: bool,
) -> Result<MeanGrad> {
    if n_mc < 1000 {
        return Err(Error::InsufficientSamples {
            needed: 1000,
            got: n_mc,
        });
    }
    let mut rng = model.rng(stream);
    let mut overall = VecMoments::new(loss.k);
    for s in model.sample_with(n_mc, &mut rng) {
        overall.push(&loss.gradient(&f(&s.x))?);
    }
    let mut per_component = Vec::new();
    let mut per_component_stderr = Vec::new();
    if condition_on_component {
        for g in 0..model.r() {
            let mut acc = VecMoments::new(loss.k);
            for x in model.sample_component(g, n_mc, &mut rng) {
                acc.push(&loss.gradient(&f(&x))?);
            }
            per_component_stderr.push(acc.stderr());
            per_component.push(acc.mean);
        }
    }
    Ok(MeanGrad {
        overall_stderr: overall.stderr(),
        overall: overall.mean,
        per_component,
        per_component_stderr,
        samples: n_mc,
        seed: model.seed(),
        stream,
    })
}

/// `sigma^2 - (1/n) sum D(y_i, f(x_i))`; `f` overfits by `eps` when this
/// exceeds `eps`.
pub fn empirical_overfit_gap(
    loss: &LossSpec,
    f: impl Fn(&[f64]) -> Vec<f64>,
    data: &[Sample],
    sigma2: f64,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let mut total = 0.0;
    for s in data {
        total += loss.divergence(&s.y, &f(&s.x))?;
    }
    Ok(sigma2 - total / data.len() as f64)
}

/// Mixture terms for one `(sample, coordinate)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureTerm {
    pub i: usize,
    pub l: usize,
    /// `-(y_l - mu_l)`
    pub t: f64,
    /// `grad phi(f(x))_l - E[grad phi(f(X))_l]`
    pub v: f64,
    /// `grad phi(f(x))_l - E[grad phi(f(X))_l | G]`
    pub v_hat: f64,
    /// `E[grad phi(f(X))_l | G] - E[grad phi(f(X))_l]`
    pub v_tilde: f64,
    pub u: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureTermsRecord {
    pub k: usize,
    pub terms: Vec<MixtureTerm>,
    /// Largest `|v - v_hat - v_tilde|`.
    pub split_residual: f64,
    /// Largest `|u - t v|`.
    pub product_residual: f64,
}

impl MixtureTermsRecord {
    pub fn sum_u(&self) -> f64 {
        self.terms.iter().map(|t| t.u).sum()
    }
}

/// Splits the `Gamma3` term of every sample into per-coordinate mixture terms
/// using the component means in `grads`.
pub fn mixture_terms(
    loss: &LossSpec,
    model: &DataModel,
    f: impl Fn(&[f64]) -> Vec<f64>,
    samples: &[Sample],
    grads: &MeanGrad,
) -> Result<MixtureTermsRecord> {
    if grads.per_component.len() != model.r() {
        return Err(Error::invalid(
            "mixture terms need per-component gradient means (condition_on_component)",
        ));
    }
    let k = loss.k;
    let mut terms = Vec::with_capacity(samples.len() * k);
    let mut split_residual: f64 = 0.0;
    let mut product_residual: f64 = 0.0;
    for (i, s) in samples.iter().enumerate() {
        let mu = model.conditional_mean(&s.x);
        let grad = loss.gradient(&f(&s.x))?;
        let comp = &grads.per_component[s.g];
        for l in 0..k {
            let t = -(s.y[l] - mu[l]);
            let v = grad[l] - grads.overall[l];
            let v_hat = grad[l] - comp[l];
            let v_tilde = comp[l] - grads.overall[l];
            let u = t * v;
            split_residual = split_residual.max((v - v_hat - v_tilde).abs());
            product_residual = product_residual.max((u - t * v).abs());
            terms.push(MixtureTerm {
                i,
                l,
                t,
                v,
                v_hat,
                v_tilde,
                u,
            });
        }
    }
    Ok(MixtureTermsRecord {
        k,
        terms,
        split_residual,
        product_residual,
    })
}
