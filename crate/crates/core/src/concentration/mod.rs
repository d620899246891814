//! Concentration inequalities and their Monte-Carlo checks.
//!
//! The analytic evaluators return uncapped probabilities; [`cap`] clips them
//! to 1 for reporting. The sub-Gaussian estimator evaluates the empirical
//! moment generating function on a fixed grid of `lambda` values.

mod tail;

pub use tail::{
    run_tail_check, subgaussian_product_check, Predictor, ProductCheck, StatementId,
    TailCheckSetup, TailReport, ZSpec,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum sample count accepted by [`subgaussian_estimate`].
pub const MIN_MGF_SAMPLES: usize = 1000;

/// Grid multipliers; the actual grid is `+-m / stddev`.
pub const LAMBDA_MULTIPLIERS: [f64; 5] = [0.5, 1.0, 2.0, 4.0, 8.0];

pub fn cap(p: f64) -> f64 {
    p.min(1.0)
}

/// One-sided Hoeffding bound `exp(-2 n t^2 / w^2)` for the mean of `n`
/// independent variables with range width `w`.
pub fn hoeffding_bound(n: usize, t: f64, range_width: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    (-2.0 * n as f64 * t * t / (range_width * range_width)).exp()
}

/// Bounded-differences bound `2 exp(-n t^2 / (16 b^2))` for the norm of the
/// mean of `n` independent mean-zero vectors of norm at most `b`.
pub fn vector_bd_bound(n: usize, t: f64, b: f64) -> f64 {
    2.0 * (-(n as f64) * t * t / (16.0 * b * b)).exp()
}

/// Azuma bound `exp(-n t^2 / (2 c^2))` for a martingale with increments in
/// `[-c, c]`.
pub fn azuma_bound(n: usize, t: f64, c: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    (-(n as f64) * t * t / (2.0 * c * c)).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubGaussEstimate {
    pub sigma_hat: f64,
    pub lambda_grid: Vec<f64>,
    pub method: String,
    /// Grid points whose empirical MGF overflowed and were skipped.
    pub skipped: Vec<f64>,
}

/// Largest `sqrt(2 log M(lambda)) / |lambda|` over the grid, where `M` is the
/// empirical MGF of the centered samples.
///
/// Zero-variance input returns 0 without touching the grid.
pub fn subgaussian_estimate(samples: &[f64]) -> Result<SubGaussEstimate> {
    if samples.len() < MIN_MGF_SAMPLES {
        return Err(Error::InsufficientSamples {
            needed: MIN_MGF_SAMPLES,
            got: samples.len(),
        });
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let centered: Vec<f64> = samples.iter().map(|v| v - mean).collect();
    let var = centered.iter().map(|c| c * c).sum::<f64>() / n;
    let sd = var.sqrt();
    let method = "MGF-grid".to_string();
    if !(sd > 0.0) || sd < 1e-300 {
        return Ok(SubGaussEstimate {
            sigma_hat: 0.0,
            lambda_grid: Vec::new(),
            method,
            skipped: Vec::new(),
        });
    }
    let grid: Vec<f64> = LAMBDA_MULTIPLIERS
        .iter()
        .flat_map(|m| [-m / sd, m / sd])
        .collect();
    let mut sigma_hat: f64 = 0.0;
    let mut skipped = Vec::new();
    for &lambda in &grid {
        let exps: Vec<f64> = centered.iter().map(|c| lambda * c).collect();
        let max = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_mgf = max + exps.iter().map(|e| (e - max).exp()).sum::<f64>().ln() - n.ln();
        if !log_mgf.is_finite() {
            skipped.push(lambda);
            continue;
        }
        let s = (2.0 * log_mgf.max(0.0)).sqrt() / lambda.abs();
        sigma_hat = sigma_hat.max(s);
    }
    Ok(SubGaussEstimate {
        sigma_hat,
        lambda_grid: grid,
        method,
        skipped,
    })
}

/// Mean and standard error of `values`.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
