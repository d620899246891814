//! Projected full-batch gradient descent on the empirical divergence.

use serde::{Deserialize, Serialize};

use super::FunctionClass;
use crate::bregman::LossSpec;
use crate::error::{Error, Result};
use crate::rng;
use crate::sampler::Sample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub lr: f64,
    pub max_steps: usize,
    /// Clamp into the parameter box after every step; otherwise leaving the
    /// box is an error.
    pub projection: bool,
    /// Seed and stream of the initialisation draw.
    pub seed: u64,
    pub stream: u64,
    /// Record the gap every this many steps (0 disables the history).
    pub record_every: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            lr: 0.05,
            max_steps: 5000,
            projection: true,
            seed: 0,
            stream: 0,
            record_every: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    /// Best iterate seen (the stopping iterate when the target is reached).
    pub w: Vec<f64>,
    /// `sigma2 - empirical loss` at `w`.
    pub gap: f64,
    pub achieved: bool,
    pub steps: usize,
    /// `eps >= sigma2`: the target sits below zero loss and cannot be met.
    pub infeasible: bool,
    pub history: Vec<(usize, f64)>,
}

/// Empirical loss and its gradient at `w`.
fn loss_and_grad(class: &FunctionClass, loss: &LossSpec, data: &[Sample], w: &[f64]) -> Result<(f64, Vec<f64>)> {
    let net = class.realize_projected(w)?;
    let inv_n = 1.0 / data.len() as f64;
    let mut grad = vec![0.0; class.p()];
    let mut total = 0.0;
    for s in data {
        let out = net.accumulate_grad(&s.x, &mut grad, |out| {
            Ok(loss
                .divergence_grad_pred(&s.y, out)?
                .into_iter()
                .map(|g| g * inv_n)
                .collect())
        })?;
        total += loss.divergence(&s.y, &out)?;
    }
    Ok((total * inv_n, grad))
}

/// Runs gradient descent until `sigma2 - loss > eps` or the step budget is
/// spent.
pub fn train_overfit(
    class: &FunctionClass,
    loss: &LossSpec,
    data: &[Sample],
    sigma2: f64,
    eps: f64,
    init: Option<Vec<f64>>,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    if !(eps > 0.0) {
        return Err(Error::invalid("overfitting margin eps must be positive"));
    }
    let mut w = match init {
        Some(w) => {
            class.check_params(&w)?;
            w
        }
        None => class.init_params(&mut rng::stream(opts.seed, opts.stream)),
    };
    let infeasible = eps >= sigma2;
    let mut history = Vec::new();
    let mut best_w = w.clone();
    let mut best_gap = f64::NEG_INFINITY;
    let mut steps = 0;
    loop {
        let (value, grad) = loss_and_grad(class, loss, data, &w)?;
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss {
                step: steps,
                last_finite: best_w,
            });
        }
        let gap = sigma2 - value;
        if opts.record_every > 0 && steps % opts.record_every == 0 {
            history.push((steps, gap));
        }
        if gap > best_gap {
            best_gap = gap;
            best_w.clone_from(&w);
        }
        if gap > eps {
            if opts.record_every > 0 && steps % opts.record_every != 0 {
                history.push((steps, gap));
            }
            return Ok(TrainOutcome {
                w,
                gap,
                achieved: true,
                steps,
                infeasible,
                history,
            });
        }
        if steps >= opts.max_steps {
            break;
        }
        for (wi, gi) in w.iter_mut().zip(&grad) {
            *wi -= opts.lr * gi;
        }
        if opts.projection {
            class.project(&mut w);
        } else {
            class.check_params(&w)?;
        }
        steps += 1;
    }
    Ok(TrainOutcome {
        w: best_w,
        gap: best_gap,
        achieved: false,
        steps,
        infeasible,
        history,
    })
}

/// Empirical mean divergence of `w` on `data`.
pub fn empirical_loss(class: &FunctionClass, loss: &LossSpec, data: &[Sample], w: &[f64]) -> Result<f64> {
    Ok(loss_and_grad(class, loss, data, w)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::function_class::Head;
    use crate::sampler::{DataModel, LabelLaw, MeanMap};

    fn regression_model(d: usize, s: f64) -> DataModel {
        DataModel::new(
            d,
            vec![1.0],
            vec![vec![0.0; d]],
            LabelLaw::Regression {
                k: 1,
                map: MeanMap::Tanh,
                gain: 1.0,
                noise_scale: s,
                m: 1.0,
            },
            9,
        )
        .unwrap()
    }

    #[test]
    fn zero_noise_target_is_infeasible() {
        let model = regression_model(4, 0.0);
        let loss = LossSpec::square(1, 1.0).unwrap();
        let data = model.sample_batch(20, 0);
        let class = FunctionClass::new(vec![4, 16, 1], vec![2.0], Head::Clip { m: 1.0, smooth: false }, 3.0).unwrap();
        let opts = TrainOptions {
            max_steps: 300,
            ..TrainOptions::default()
        };
        let out = train_overfit(&class, &loss, &data, 0.0, 0.01, None, &opts).unwrap();
        assert!(!out.achieved && out.infeasible);
        assert!(out.gap <= 0.0 && out.gap > -0.05, "{}", out.gap);
    }

    #[test]
    fn noisy_small_sample_is_memorized() {
        let model = regression_model(8, 0.5);
        let loss = LossSpec::square(1, 1.0).unwrap();
        let sigma2 = 0.25 / 3.0;
        let data = model.sample_batch(16, 1);
        let class = FunctionClass::new(vec![8, 64, 1], vec![3.0], Head::Clip { m: 1.0, smooth: false }, 3.0).unwrap();
        let opts = TrainOptions {
            lr: 0.1,
            max_steps: 5000,
            ..TrainOptions::default()
        };
        let eps = 0.5 * sigma2;
        let out = train_overfit(&class, &loss, &data, sigma2, eps, None, &opts).unwrap();
        assert!(out.achieved, "gap {}", out.gap);
        assert!(out.gap > eps);
        let direct = sigma2 - empirical_loss(&class, &loss, &data, &out.w).unwrap();
        assert_eq!(direct, out.gap);
        assert!(class.contains(&out.w));
    }

    #[test]
    fn eps_above_sigma2_never_achieves() {
        let model = regression_model(4, 0.3);
        let loss = LossSpec::square(1, 1.0).unwrap();
        let data = model.sample_batch(10, 2);
        let class = FunctionClass::new(vec![4, 32, 1], vec![3.0], Head::Clip { m: 1.0, smooth: false }, 3.0).unwrap();
        let opts = TrainOptions {
            max_steps: 200,
            ..TrainOptions::default()
        };
        let out = train_overfit(&class, &loss, &data, 0.03, 0.05, None, &opts).unwrap();
        assert!(out.infeasible && !out.achieved);
    }

    #[test]
    fn diverging_steps_report_non_finite_loss() {
        let model = regression_model(4, 0.3);
        // outputs stay finite inside a huge box while their squares overflow
        let loss = LossSpec::square(1, 1e300).unwrap();
        let data = model.sample_batch(10, 2);
        let class = FunctionClass::new(vec![4, 1], vec![1e200], Head::Clip { m: 1e300, smooth: false }, 3.0).unwrap();
        let opts = TrainOptions {
            lr: 1e160,
            max_steps: 50,
            ..TrainOptions::default()
        };
        let err = train_overfit(&class, &loss, &data, 0.03, 0.01, None, &opts).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { .. }));
    }
}
