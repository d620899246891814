//! Exact evaluator for finite mixture models `G -> X -> Y`.
//!
//! Covariates are atom indices and predictors are tables of one prediction
//! per atom, so every expectation is a finite sum. This is the ground truth
//! for the mean-zero claims and for conditional-mean optimality.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bregman::{LossKind, LossSpec, Region};
use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Grids larger than this are refused by [`predictor_grid`].
pub const MAX_GRID_POINTS: usize = 2_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteModel {
    pub k: usize,
    /// `P(G = g)`.
    pub weights: Vec<f64>,
    /// `P(X = x | G = g)`, one row per component.
    pub x_given_g: Vec<Vec<f64>>,
    /// Label atoms `(P(Y = y | X = x), y)` for every `x`.
    pub labels: Vec<Vec<(f64, Vec<f64>)>>,
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|v| !(*v >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return Err(Error::invalid(format!("{what} is not a probability vector")));
    }
    Ok(())
}

/// Random probability vector of length `n` with every entry at least
/// `floor`.
fn random_simplex(n: usize, floor: f64, rng: &mut StreamRng) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = raw.iter().sum();
    let mass = 1.0 - n as f64 * floor;
    let mut p: Vec<f64> = raw.iter().map(|v| floor + mass * v / s).collect();
    // put rounding error on the largest entry so the sum is exactly one
    let total: f64 = p.iter().sum();
    let imax = (0..n).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap_or(0);
    p[imax] += 1.0 - total;
    p
}

impl DiscreteModel {
    pub fn new(
        k: usize,
        weights: Vec<f64>,
        x_given_g: Vec<Vec<f64>>,
        labels: Vec<Vec<(f64, Vec<f64>)>>,
    ) -> Result<Self> {
        check_distribution(&weights, "component weights")?;
        if x_given_g.len() != weights.len() {
            return Err(Error::invalid("one covariate law per component is required"));
        }
        for row in &x_given_g {
            if row.len() != labels.len() {
                return Err(Error::DimensionMismatch {
                    expected: labels.len(),
                    got: row.len(),
                });
            }
            check_distribution(row, "P(X | G)")?;
        }
        for atoms in &labels {
            let p: Vec<f64> = atoms.iter().map(|a| a.0).collect();
            check_distribution(&p, "P(Y | X)")?;
            if let Some((_, y)) = atoms.iter().find(|a| a.1.len() != k) {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    got: y.len(),
                });
            }
        }
        Ok(DiscreteModel {
            k,
            weights,
            x_given_g,
            labels,
        })
    }

    /// A random model whose labels live in the loss's `Omega` and whose
    /// conditional means live in its `A` region. Classification losses use
    /// one-hot (or 0/1) label atoms, so `ny` is ignored for them.
    pub fn random(loss: &LossSpec, nx: usize, ny: usize, r: usize, rng: &mut StreamRng) -> Result<Self> {
        if nx == 0 || ny == 0 || r == 0 {
            return Err(Error::invalid("discrete model needs at least one atom of each kind"));
        }
        let k = loss.k;
        let weights = random_simplex(r, 0.0, rng);
        let x_given_g = (0..r).map(|_| random_simplex(nx, 0.0, rng)).collect();
        let alpha = loss.params.alpha;
        let labels = (0..nx)
            .map(|_| match &loss.kind {
                LossKind::Square | LossKind::Mahalanobis { .. } => {
                    let m = loss.params.m;
                    let p = random_simplex(ny, 0.0, rng);
                    p.into_iter()
                        .map(|pi| {
                            let y = (0..k).map(|_| rng.random_range(-m..=m)).collect();
                            (pi, y)
                        })
                        .collect()
                }
                LossKind::NegEntropy => {
                    let q = random_simplex(k, alpha, rng);
                    q.into_iter()
                        .enumerate()
                        .map(|(l, ql)| {
                            let mut y = vec![0.0; k];
                            y[l] = 1.0;
                            (ql, y)
                        })
                        .collect()
                }
                LossKind::BinaryEntropy => {
                    let q1 = rng.random_range(alpha..=1.0 - alpha);
                    vec![(1.0 - q1, vec![0.0]), (q1, vec![1.0])]
                }
            })
            .collect();
        DiscreteModel::new(k, weights, x_given_g, labels)
    }

    pub fn nx(&self) -> usize {
        self.labels.len()
    }

    pub fn r(&self) -> usize {
        self.weights.len()
    }

    /// Marginal `P(X = x)`.
    pub fn p_x(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.nx()];
        for (w, row) in self.weights.iter().zip(&self.x_given_g) {
            for (px, q) in p.iter_mut().zip(row) {
                *px += w * q;
            }
        }
        p
    }

    pub fn conditional_mean(&self, x: usize) -> Vec<f64> {
        let mut mu = vec![0.0; self.k];
        for (p, y) in &self.labels[x] {
            for (m, v) in mu.iter_mut().zip(y) {
                *m += p * v;
            }
        }
        mu
    }

    /// `E[D(Y, E[Y|X])]`.
    pub fn sigma2(&self, loss: &LossSpec) -> Result<f64> {
        let px = self.p_x();
        let mut acc = 0.0;
        for x in 0..self.nx() {
            let mu = self.conditional_mean(x);
            for (p, y) in &self.labels[x] {
                acc += px[x] * p * loss.divergence(y, &mu)?;
            }
        }
        Ok(acc)
    }

    /// Expected loss `E[D(Y, f(X))]` of a table predictor.
    pub fn risk(&self, loss: &LossSpec, preds: &[Vec<f64>]) -> Result<f64> {
        let px = self.p_x();
        let mut acc = 0.0;
        for x in 0..self.nx() {
            acc += px[x] * self.atom_risk(loss, x, &preds[x])?;
        }
        Ok(acc)
    }

    /// `E[D(Y, pred) | X = x]`.
    pub fn atom_risk(&self, loss: &LossSpec, x: usize, pred: &[f64]) -> Result<f64> {
        let mut acc = 0.0;
        for (p, y) in &self.labels[x] {
            acc += p * loss.divergence(y, pred)?;
        }
        Ok(acc)
    }

    /// `E[grad phi(f(X))]`.
    pub fn mean_grad(&self, loss: &LossSpec, preds: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.weighted_grad(loss, preds, &self.p_x())
    }

    /// `E[grad phi(f(X)) | G = g]`.
    pub fn component_mean_grad(&self, loss: &LossSpec, preds: &[Vec<f64>], g: usize) -> Result<Vec<f64>> {
        self.weighted_grad(loss, preds, &self.x_given_g[g])
    }

    fn weighted_grad(&self, loss: &LossSpec, preds: &[Vec<f64>], px: &[f64]) -> Result<Vec<f64>> {
        let mut e = vec![0.0; self.k];
        for x in 0..self.nx() {
            for (ei, gi) in e.iter_mut().zip(loss.gradient(&preds[x])?) {
                *ei += px[x] * gi;
            }
        }
        Ok(e)
    }

    /// Exact expectations of every decomposition term for a table predictor.
    pub fn expected_terms(&self, loss: &LossSpec, preds: &[Vec<f64>]) -> Result<ExpectedTerms> {
        let sigma2 = self.sigma2(loss)?;
        let e = self.mean_grad(loss, preds)?;
        let px = self.p_x();
        let mut out = ExpectedTerms::default();
        for x in 0..self.nx() {
            let mu = self.conditional_mean(x);
            let f = &preds[x];
            let grad_mu = loss.gradient(&mu)?;
            let grad_f = loss.gradient(f)?;
            for (p, y) in &self.labels[x] {
                let w = px[x] * p;
                let mut g1 = 0.0;
                let mut g2 = 0.0;
                let mut g3 = 0.0;
                for l in 0..self.k {
                    let noise = y[l] - mu[l];
                    g1 += noise * grad_mu[l];
                    g2 -= noise * e[l];
                    g3 -= noise * (grad_f[l] - e[l]);
                }
                out.z += w * loss.divergence(y, f)?;
                out.phi1 += w * loss.divergence(&mu, f)?;
                out.phi2 += w * (loss.divergence(y, &mu)? - sigma2);
                out.gamma1 += w * g1;
                out.gamma2 += w * g2;
                out.gamma3 += w * g3;
            }
        }
        out.sigma2 = sigma2;
        Ok(out)
    }

    /// `E[T_l | G = g]` for every `(g, l)` and `E[T_l Vhat_l]` for every `l`,
    /// with `T_l = -(Y_l - E[Y_l|X])` and
    /// `Vhat_l = grad phi(f(X))_l - E[grad phi(f(X))_l | G]`.
    pub fn mixture_expectations(&self, loss: &LossSpec, preds: &[Vec<f64>]) -> Result<MixtureExpectations> {
        let mut t_given_g = vec![vec![0.0; self.k]; self.r()];
        let mut t_vhat = vec![0.0; self.k];
        let grads: Vec<Vec<f64>> = preds.iter().map(|f| loss.gradient(f)).collect::<Result<_>>()?;
        for g in 0..self.r() {
            let comp = self.component_mean_grad(loss, preds, g)?;
            for x in 0..self.nx() {
                let mu = self.conditional_mean(x);
                let pxg = self.x_given_g[g][x];
                for (p, y) in &self.labels[x] {
                    for l in 0..self.k {
                        let t = -(y[l] - mu[l]);
                        t_given_g[g][l] += pxg * p * t;
                        t_vhat[l] += self.weights[g] * pxg * p * t * (grads[x][l] - comp[l]);
                    }
                }
            }
        }
        Ok(MixtureExpectations { t_given_g, t_vhat })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExpectedTerms {
    pub z: f64,
    pub sigma2: f64,
    pub phi1: f64,
    pub phi2: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureExpectations {
    pub t_given_g: Vec<Vec<f64>>,
    pub t_vhat: Vec<f64>,
}

/// A random prediction inside the loss's class range `R`.
pub fn random_prediction(loss: &LossSpec, rng: &mut StreamRng) -> Vec<f64> {
    match loss.domain.r_region {
        Region::Box { lo, hi } => (0..loss.k).map(|_| rng.random_range(lo..=hi)).collect(),
        Region::Simplex => random_simplex(loss.k, 0.0, rng),
        Region::FlooredSimplex { floor } => random_simplex(loss.k, floor, rng),
    }
}

/// Points of the class range `R` on a grid of spacing `step`. Simplex grids
/// keep every coordinate at least `max(floor, step)` so gradients stay
/// finite.
pub fn predictor_grid(loss: &LossSpec, step: f64) -> Result<Vec<Vec<f64>>> {
    if !(step > 0.0) {
        return Err(Error::invalid("grid step must be positive"));
    }
    let k = loss.k;
    match loss.domain.r_region {
        Region::Box { lo, hi } => {
            let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
            let total = (n as f64).powi(k as i32);
            if total > MAX_GRID_POINTS as f64 {
                return Err(Error::NetBudgetExceeded {
                    required: total,
                    budget: MAX_GRID_POINTS,
                });
            }
            let axis: Vec<f64> = (0..n).map(|i| (lo + i as f64 * step).min(hi)).collect();
            let mut out = vec![Vec::with_capacity(k)];
            for _ in 0..k {
                out = out
                    .into_iter()
                    .flat_map(|p| {
                        axis.iter().map(move |&v| {
                            let mut q = p.clone();
                            q.push(v);
                            q
                        })
                    })
                    .collect();
            }
            Ok(out)
        }
        Region::Simplex | Region::FlooredSimplex { .. } => {
            let floor = match loss.domain.r_region {
                Region::FlooredSimplex { floor } => floor,
                _ => 0.0,
            };
            let units = (1.0 / step).round() as usize;
            let lo_units = ((floor.max(step)) / step).ceil() as usize;
            let mut out = Vec::new();
            let mut current = Vec::with_capacity(k);
            simplex_points(k, units, lo_units, &mut current, &mut out, step)?;
            Ok(out)
        }
    }
}

fn simplex_points(
    k: usize,
    remaining: usize,
    lo: usize,
    current: &mut Vec<usize>,
    out: &mut Vec<Vec<f64>>,
    step: f64,
) -> Result<()> {
    if current.len() + 1 == k {
        if remaining >= lo {
            let mut p: Vec<f64> = current.iter().map(|&u| u as f64 * step).collect();
            let used: f64 = p.iter().sum();
            p.push(1.0 - used);
            out.push(p);
            if out.len() > MAX_GRID_POINTS {
                return Err(Error::NetBudgetExceeded {
                    required: out.len() as f64,
                    budget: MAX_GRID_POINTS,
                });
            }
        }
        return Ok(());
    }
    let slots_left = k - current.len() - 1;
    let mut u = lo;
    while u + slots_left * lo <= remaining {
        current.push(u);
        simplex_points(k, remaining - u, lo, current, out, step)?;
        current.pop();
        u += 1;
    }
    Ok(())
}

/// Brute-force comparison of the conditional mean against every grid
/// predictor, atom by atom (the risk is a `P(X)`-weighted sum of per-atom
/// risks, so the joint minimum is attained atom-wise).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalityReport {
    pub grid_points: usize,
    pub risk_mean: f64,
    pub risk_grid_best: f64,
    /// `max(0, risk_mean - risk_grid_best)`; positive means a grid predictor
    /// beat the conditional mean.
    pub undercut: f64,
    /// `risk_grid_best - risk_mean`, the loss from restricting to the grid.
    pub grid_gap: f64,
    pub pass: bool,
}

pub fn check_optimality(model: &DiscreteModel, loss: &LossSpec, step: f64) -> Result<OptimalityReport> {
    let grid = predictor_grid(loss, step)?;
    let px = model.p_x();
    let mut risk_mean = 0.0;
    let mut risk_best = 0.0;
    for x in 0..model.nx() {
        let mu = model.conditional_mean(x);
        risk_mean += px[x] * model.atom_risk(loss, x, &mu)?;
        let mut best = f64::INFINITY;
        for p in &grid {
            best = best.min(model.atom_risk(loss, x, p)?);
        }
        risk_best += px[x] * best;
    }
    let undercut = (risk_mean - risk_best).max(0.0);
    Ok(OptimalityReport {
        grid_points: grid.len(),
        risk_mean,
        risk_grid_best: risk_best,
        undercut,
        grid_gap: risk_best - risk_mean,
        pass: undercut <= 1e-12 * (1.0 + risk_mean.abs()),
    })
}
