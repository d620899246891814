//! Monte-Carlo tail checks of the one-sided concentration statements.
//!
//! Every trial draws one sample set of size `n` on its own stream and
//! evaluates all requested statistics on it, so the statements of one run
//! share sample sets. Trials run in parallel and are merged in index order,
//! which keeps reports bit-identical for any thread count.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{azuma_bound, hoeffding_bound, subgaussian_estimate, vector_bd_bound};
use crate::bregman::{LossConstants, LossSpec};
use crate::decomposition::MeanGrad;
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{self, tags, StreamRng};
use crate::sampler::DataModel;

#[allow(non_camel_case_types)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StatementId {
    /// Mean of `Phi2` below `-eps`.
    Obs33,
    /// Mean of `Gamma1` below `-eps`.
    Obs34,
    /// `gamma |mean(Y - E[Y|X])| >= eps`, which covers the `Gamma2` mean of
    /// every predictor at once.
    Obs35,
    /// Mean of `Gamma3` below `-eps` for a fixed `L`-Lipschitz predictor.
    Lem36,
    /// Mean of `T_l Vhat_l` below `-eps`, worst coordinate.
    Lem51_vhat,
    /// `2 gamma sum_k |sum_{i in S_k} T_{i,l}| >= n eps`, worst coordinate;
    /// this event contains the infimum over the class of the `T Vtilde` mean
    /// falling below `-eps`.
    Lem52_vtilde,
    /// Mean of `n` uniform `[0, 1]` draws below `1/2 - eps`.
    Hoeffding,
    /// Norm of the mean of `n` random-sign unit vectors in `R^3` above `eps`.
    VectorBD,
    /// `+-1` random walk ending below `-n eps`.
    Azuma,
}

impl StatementId {
    pub const ALL: [StatementId; 9] = [
        StatementId::Obs33,
        StatementId::Obs34,
        StatementId::Obs35,
        StatementId::Lem36,
        StatementId::Lem51_vhat,
        StatementId::Lem52_vtilde,
        StatementId::Hoeffding,
        StatementId::VectorBD,
        StatementId::Azuma,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            StatementId::Obs33 => "Obs33",
            StatementId::Obs34 => "Obs34",
            StatementId::Obs35 => "Obs35",
            StatementId::Lem36 => "Lem36",
            StatementId::Lem51_vhat => "Lem51_vhat",
            StatementId::Lem52_vtilde => "Lem52_vtilde",
            StatementId::Hoeffding => "Hoeffding",
            StatementId::VectorBD => "VectorBD",
            StatementId::Azuma => "Azuma",
        }
    }

    pub fn parse(s: &str) -> Option<StatementId> {
        StatementId::ALL.into_iter().find(|id| id.name().eq_ignore_ascii_case(s))
    }

    pub fn needs_predictor(&self) -> bool {
        matches!(self, StatementId::Lem36 | StatementId::Lem51_vhat)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub statement_id: StatementId,
    pub eps: f64,
    /// `eps` divided by the statement's natural scale.
    pub eps_multiplier: f64,
    pub scale: f64,
    pub n: usize,
    pub trials: usize,
    pub empirical_freq: f64,
    /// Uncapped analytic bound.
    pub analytic_bound: f64,
    pub mc_stderr: f64,
    pub pass: bool,
    /// The bound is at least 1 and says nothing.
    pub vacuous: bool,
    /// Product-fact constant used by the statements that need it, else `None`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_fact: Option<f64>,
}

impl TailReport {
    fn new(
        statement_id: StatementId,
        eps: f64,
        eps_multiplier: f64,
        scale: f64,
        n: usize,
        hits: usize,
        trials: usize,
        analytic_bound: f64,
        c_fact: Option<f64>,
    ) -> Self {
        let f = hits as f64 / trials as f64;
        let mc_stderr = (f * (1.0 - f) / trials as f64).sqrt();
        TailReport {
            statement_id,
            eps,
            eps_multiplier,
            scale,
            n,
            trials,
            empirical_freq: f,
            analytic_bound,
            mc_stderr,
            pass: f <= analytic_bound + 3.0 * mc_stderr,
            vacuous: analytic_bound >= 1.0,
            c_fact,
        }
    }
}

pub type Predictor<'a> = dyn Fn(&[f64]) -> Vec<f64> + Sync + 'a;

/// Everything a tail run needs besides the statement list.
pub struct TailCheckSetup<'a> {
    pub loss: &'a LossSpec,
    pub constants: LossConstants,
    pub model: &'a DataModel,
    /// Fixed predictor for `Lem36` and `Lem51_vhat`.
    pub predictor: Option<&'a Predictor<'a>>,
    /// Certified Lipschitz constant of `predictor`.
    pub lipschitz: f64,
    /// Gradient means of `predictor`; `Lem51_vhat` needs the per-component rows.
    pub grads: Option<MeanGrad>,
    pub sigma2: f64,
    pub n: usize,
    pub trials: usize,
    /// Isoperimetry constant of the covariate components.
    pub c_iso: f64,
    /// Constant of the bounded-times-sub-Gaussian product fact.
    pub c_fact: f64,
    /// Trial `t` uses stream `stream_id(TAIL_TRIAL, stream_base + t)`.
    pub stream_base: u64,
}

impl TailCheckSetup<'_> {
    /// Scale against which `eps` multipliers are read: the range or
    /// sub-Gaussian parameter that sets the statement's exponent.
    pub fn scale(&self, id: StatementId) -> f64 {
        let c = &self.constants;
        let k = c.k as f64;
        let d = self.model.d() as f64;
        let sub = self.c_fact * c.d_omega * self.lipschitz * c.l_g * (self.c_iso / d).sqrt();
        match id {
            StatementId::Obs33 => c.big_m0,
            StatementId::Obs34 => c.big_m1,
            StatementId::Obs35 => c.big_m2,
            StatementId::Lem36 => k * sub,
            StatementId::Lem51_vhat => sub,
            StatementId::Lem52_vtilde => {
                2.0 * (2.0 * self.model.r() as f64).sqrt() * c.gamma * c.d_omega
            }
            StatementId::Hoeffding | StatementId::VectorBD | StatementId::Azuma => 1.0,
        }
    }

    /// Analytic bound on the event's probability at deviation `eps`.
    pub fn bound(&self, id: StatementId, eps: f64) -> f64 {
        let c = &self.constants;
        let n = self.n as f64;
        let k = c.k as f64;
        let d = self.model.d() as f64;
        let r = self.model.r() as f64;
        let denom = 2.0
            * self.c_iso
            * self.c_fact.powi(2)
            * c.d_omega.powi(2)
            * self.lipschitz.powi(2)
            * c.l_g.powi(2);
        match id {
            StatementId::Obs33 => (-2.0 * n * eps * eps / c.big_m0.powi(2)).exp(),
            StatementId::Obs34 => (-2.0 * n * eps * eps / c.big_m1.powi(2)).exp(),
            StatementId::Obs35 => 2.0 * (-2.0 * n * eps * eps / c.big_m2.powi(2)).exp(),
            StatementId::Lem36 => k * (-n * d * eps * eps / (denom * k * k)).exp(),
            StatementId::Lem51_vhat => (-n * d * eps * eps / denom).exp(),
            StatementId::Lem52_vtilde => {
                2.0 * r * (-n * eps * eps / (8.0 * c.gamma.powi(2) * r * c.d_omega.powi(2))).exp()
            }
            StatementId::Hoeffding => hoeffding_bound(self.n, eps, 1.0),
            StatementId::VectorBD => vector_bd_bound(self.n, eps, 1.0),
            StatementId::Azuma => azuma_bound(self.n, eps, 1.0),
        }
    }

    pub fn validate(&self, ids: &[StatementId]) -> Result<()> {
        if self.n == 0 || self.trials == 0 {
            return Err(Error::invalid("tail checks need n >= 1 and trials >= 1"));
        }
        for id in ids {
            if id.needs_predictor() && self.predictor.is_none() {
                return Err(Error::invalid(format!("{} needs a fixed predictor", id.name())));
            }
            match id {
                StatementId::Lem36 => {
                    if self.model.r() > 1 {
                        return Err(Error::MixtureNotSupported(self.model.r()));
                    }
                    if self.grads.is_none() {
                        return Err(Error::invalid("Lem36 needs the gradient mean of the predictor"));
                    }
                }
                StatementId::Lem51_vhat => {
                    let ok = self
                        .grads
                        .as_ref()
                        .is_some_and(|g| g.per_component.len() == self.model.r());
                    if !ok {
                        return Err(Error::invalid("Lem51_vhat needs per-component gradient means"));
                    }
                }
                StatementId::Lem52_vtilde => {
                    if self.model.r() < 2 {
                        return Err(Error::ConfigInfeasible(
                            "Lem52_vtilde needs a mixture with r >= 2".into(),
                        ));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Statistic(s) of one trial, oriented so that every event reads
    /// `stat <= -eps`. Per-coordinate statements return `K` values.
    fn trial(&self, ids: &[StatementId], t: usize) -> Result<Vec<Vec<f64>>> {
        let mut rng = rng::stream(self.model.seed(), rng::stream_id(tags::TAIL_TRIAL, self.stream_base + t as u64));
        let samples = self.model.sample_with(self.n, &mut rng);
        let k = self.loss.k;
        let r = self.model.r();
        let nf = self.n as f64;
        let need_f = ids.iter().any(|id| id.needs_predictor());
        let mut phi2 = 0.0;
        let mut gamma1 = 0.0;
        let mut gamma3 = 0.0;
        let mut noise_mean = vec![0.0; k];
        let mut t_vhat = vec![0.0; k];
        let mut t_by_component = vec![vec![0.0; k]; r];
        for s in &samples {
            let mu = self.model.conditional_mean(&s.x);
            let noise = linalg::sub(&s.y, &mu);
            phi2 += self.loss.divergence(&s.y, &mu)? - self.sigma2;
            gamma1 += linalg::dot(&noise, &self.loss.gradient(&mu)?);
            for l in 0..k {
                noise_mean[l] += noise[l] / nf;
                t_by_component[s.g][l] -= noise[l];
            }
            if need_f {
                let (f, grads) = (self.predictor.unwrap(), self.grads.as_ref().unwrap());
                let gf = self.loss.gradient(&f(&s.x))?;
                for l in 0..k {
                    gamma3 -= noise[l] * (gf[l] - grads.overall[l]);
                    if let Some(comp) = grads.per_component.get(s.g) {
                        t_vhat[l] -= noise[l] * (gf[l] - comp[l]);
                    }
                }
            }
        }
        let gamma = self.constants.gamma;
        let mut out = Vec::with_capacity(ids.len());
        for id in ids {
            out.push(match id {
                StatementId::Obs33 => vec![phi2 / nf],
                StatementId::Obs34 => vec![gamma1 / nf],
                StatementId::Obs35 => vec![-gamma * linalg::norm(&noise_mean)],
                StatementId::Lem36 => vec![gamma3 / nf],
                StatementId::Lem51_vhat => t_vhat.iter().map(|v| v / nf).collect(),
                StatementId::Lem52_vtilde => (0..k)
                    .map(|l| {
                        let spread: f64 = t_by_component.iter().map(|row| row[l].abs()).sum();
                        -2.0 * gamma * spread / nf
                    })
                    .collect(),
                StatementId::Hoeffding => {
                    let m: f64 = (0..self.n).map(|_| rng.random::<f64>()).sum::<f64>() / nf;
                    vec![m - 0.5]
                }
                StatementId::VectorBD => {
                    let mut acc = [0.0f64; 3];
                    let unit = 1.0 / 3f64.sqrt();
                    for _ in 0..self.n {
                        for a in acc.iter_mut() {
                            *a += if rng.random::<bool>() { unit } else { -unit };
                        }
                    }
                    vec![-linalg::norm(&acc) / nf]
                }
                StatementId::Azuma => {
                    let walk: f64 = (0..self.n)
                        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                        .sum();
                    vec![walk / nf]
                }
            });
        }
        Ok(out)
    }
}

/// Runs `setup.trials` trials and reports every statement at every
/// `eps = multiplier * scale`.
pub fn run_tail_check(
    setup: &TailCheckSetup<'_>,
    ids: &[StatementId],
    eps_multipliers: &[f64],
) -> Result<Vec<TailReport>> {
    setup.validate(ids)?;
    let stats: Vec<Vec<Vec<f64>>> = (0..setup.trials)
        .into_par_iter()
        .map(|t| setup.trial(ids, t))
        .collect::<Result<_>>()?;
    let mut reports = Vec::new();
    for (j, &id) in ids.iter().enumerate() {
        let scale = setup.scale(id);
        let c_fact = matches!(id, StatementId::Lem36 | StatementId::Lem51_vhat).then_some(setup.c_fact);
        for &mult in eps_multipliers {
            let eps = mult * scale;
            let coords = stats.first().map_or(0, |s| s[j].len());
            // per-coordinate statements: report the worst coordinate; the
            // `< 0` guard keeps a zero scale from counting exact zeros
            let hits = (0..coords)
                .map(|l| stats.iter().filter(|s| s[j][l] <= -eps && s[j][l] < 0.0).count())
                .max()
                .unwrap_or(0);
            reports.push(TailReport::new(
                id,
                eps,
                mult,
                scale,
                setup.n,
                hits,
                setup.trials,
                setup.bound(id, eps),
                c_fact,
            ));
        }
    }
    Ok(reports)
}

/// Bounded factor `Z` of the product check, as a function of the Gaussian
/// factor `X`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ZSpec {
    Zero,
    Constant(f64),
    /// `Z = M` when `|X|` is below its median and `-M` otherwise; `Z` is even
    /// in `X`, so `E[ZX] = 0`.
    EvenCoupled(f64),
}

impl ZSpec {
    fn bound(&self) -> f64 {
        match *self {
            ZSpec::Zero => 0.0,
            ZSpec::Constant(m) | ZSpec::EvenCoupled(m) => m.abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductCheck {
    pub z: ZSpec,
    pub sigma: f64,
    pub samples: usize,
    pub sigma_hat: f64,
    /// `sigma_hat / (M sigma)`, 0 when `M sigma = 0`.
    pub ratio: f64,
    pub c_configured: f64,
    pub within: bool,
}

/// Median of `|N(0, 1)|`.
const HALF_NORMAL_MEDIAN: f64 = 0.674_489_750_196_081_7;

/// Estimates the sub-Gaussian parameter of `Z X` with `X ~ N(0, sigma^2)` and
/// compares it with `C M sigma`.
pub fn subgaussian_product_check(
    z: ZSpec,
    sigma: f64,
    samples: usize,
    c_configured: f64,
    rng: &mut StreamRng,
) -> Result<ProductCheck> {
    let values: Vec<f64> = (0..samples)
        .map(|_| {
            let x = sigma * rng.sample::<f64, _>(StandardNormal);
            let zv = match z {
                ZSpec::Zero => 0.0,
                ZSpec::Constant(m) => m,
                ZSpec::EvenCoupled(m) => {
                    if x.abs() < HALF_NORMAL_MEDIAN * sigma {
                        m
                    } else {
                        -m
                    }
                }
            };
            zv * x
        })
        .collect();
    let est = subgaussian_estimate(&values)?;
    let scale = z.bound() * sigma;
    let ratio = if scale > 0.0 { est.sigma_hat / scale } else { 0.0 };
    Ok(ProductCheck {
        z,
        sigma,
        samples,
        sigma_hat: est.sigma_hat,
        ratio,
        c_configured,
        within: ratio <= c_configured,
    })
}
