//! `run-experiment`: sample, train to overfit, measure the Lipschitz
//! constant and compare it with the theoretical floor.

use std::path::Path;
use std::time::Instant;

use lawrob_core::bounds::robustness_lower_bound;
use lawrob_core::decomposition::{decompose, mean_grad_f};
use lawrob_core::function_class::{
    empirical_loss, lipschitz_lower_bound, lipschitz_upper_bound, train_overfit, LipschitzUpper, TrainOptions,
};
use lawrob_core::rng::{self, stream_id, tags};
use lawrob_core::sampler::NoiseFloor;
use lawrob_core::{BoundInputs, DecompositionRecord, Sample};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{ExperimentConfig, Format};
use crate::error::{CliError, CliResult};
use crate::output;
use crate::svg::{Mark, Plot};

pub const REPORT_SCHEMA: &str = "lawrob.experiment/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Consistent,
    Violation,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub achieved: bool,
    /// `sigma^2 - empirical loss` of the returned parameters.
    pub gap: f64,
    pub steps: usize,
    /// The margin is at least the noise floor, so it cannot be met.
    pub infeasible: bool,
    pub history: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionSummary {
    pub max_residual: f64,
    pub mean_z: f64,
    pub mean_phi1: f64,
    pub mean_phi2: f64,
    pub mean_gamma1: f64,
    pub mean_gamma2: f64,
    pub mean_gamma3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_seconds: f64,
    pub train_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema: String,
    pub config: Value,
    pub config_hash: String,
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub r: usize,
    pub p: usize,
    pub j: f64,
    pub w: f64,
    pub sigma2: NoiseFloor,
    pub eps: f64,
    pub training: TrainingSummary,
    pub l_lb: f64,
    pub l_ub: f64,
    pub l_ub_detail: LipschitzUpper,
    /// Floor at the achieved margin; absent when the margin is outside (0, 1).
    pub l_floor: Option<f64>,
    pub n_required: Option<u64>,
    pub n_ok: bool,
    pub ub_above_floor: Option<bool>,
    pub verdict: Verdict,
    pub decomposition: DecompositionSummary,
    pub timing: Timing,
}

/// Output of a run: the report plus the artifacts written next to it.
pub struct ExperimentRun {
    pub report: ExperimentReport,
    pub params: Vec<f64>,
    pub samples: Vec<Sample>,
    pub records: Vec<DecompositionRecord>,
}

/// `violation` needs an achieved margin, a met sample-size premise and a
/// certified upper bound strictly below the floor.
pub fn verdict(achieved: bool, n_ok: bool, l_ub: f64, l_floor: Option<f64>) -> Verdict {
    match l_floor {
        Some(f) if achieved => {
            if n_ok && l_ub < f {
                Verdict::Violation
            } else {
                Verdict::Consistent
            }
        }
        _ => Verdict::NotApplicable,
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> CliResult<ExperimentRun> {
    let start = Instant::now();
    let run = &cfg.run;
    let loss = cfg.loss()?;
    let model = cfg.model(&loss)?;
    let class = cfg.class(&loss, &model)?;
    let samples = model.sample_batch(run.n, stream_id(tags::SAMPLES, 0));
    let sigma2 = model.noise_floor(&loss, run.n_mc, stream_id(tags::NOISE_FLOOR, 0))?;
    let eps = match (run.eps, run.eps_fraction) {
        (Some(e), _) => e,
        (None, Some(f)) => f * sigma2.sigma2,
        (None, None) => return Err(CliError::Config("run-experiment needs run.eps or run.eps_fraction".into())),
    };

    let train_start = Instant::now();
    let opts = TrainOptions {
        lr: run.lr,
        max_steps: run.max_steps,
        projection: true,
        seed: run.seed,
        stream: stream_id(tags::INIT, 0),
        record_every: 10,
    };
    let (training, params) = if eps > 0.0 {
        let out = train_overfit(&class, &loss, &samples, sigma2.sigma2, eps, None, &opts)?;
        let summary = TrainingSummary {
            achieved: out.achieved,
            gap: out.gap,
            steps: out.steps,
            infeasible: out.infeasible,
            history: out.history,
        };
        (summary, out.w)
    } else {
        // a zero noise floor leaves no room to overfit
        let w = class.init_params(&mut rng::stream(run.seed, opts.stream));
        let gap = sigma2.sigma2 - empirical_loss(&class, &loss, &samples, &w)?;
        let summary = TrainingSummary {
            achieved: false,
            gap,
            steps: 0,
            infeasible: true,
            history: vec![(0, gap)],
        };
        (summary, w)
    };
    let train_seconds = train_start.elapsed().as_secs_f64();
    let net = class.realize(&params)?;
    let upper = lipschitz_upper_bound(&net);
    let anchors: Vec<Vec<f64>> = samples.iter().map(|s| s.x.clone()).collect();
    let l_lb = lipschitz_lower_bound(
        &net,
        &anchors,
        run.lipschitz_probes,
        &mut rng::stream(run.seed, stream_id(tags::LIPSCHITZ, 0)),
    )?;

    let f = |x: &[f64]| net.eval(x);
    let grads = mean_grad_f(&loss, &model, f, run.n_mc, stream_id(tags::GRAD_MEAN, 0), false)?;
    let records: Vec<DecompositionRecord> = samples
        .iter()
        .map(|s| decompose(&loss, &model, f, s, sigma2.sigma2, &grads.overall))
        .collect::<Result<_, _>>()?;
    let nf = records.len() as f64;
    let mean = |g: fn(&DecompositionRecord) -> f64| records.iter().map(g).sum::<f64>() / nf;
    let decomposition = DecompositionSummary {
        max_residual: records.iter().map(|r| r.residual).fold(0.0, f64::max),
        mean_z: mean(|r| r.z),
        mean_phi1: mean(|r| r.phi1),
        mean_phi2: mean(|r| r.phi2),
        mean_gamma1: mean(|r| r.gamma1),
        mean_gamma2: mean(|r| r.gamma2),
        mean_gamma3: mean(|r| r.gamma3),
    };

    let floor = if eps > 0.0 && eps < 1.0 {
        let inp = BoundInputs {
            constants: loss.constants()?,
            n: run.n,
            d: model.d(),
            p: class.p(),
            r: model.r(),
            eps,
            delta: run.delta,
            c: run.c_iso,
            big_c: run.big_c,
            j: class.j_cert(),
            w: class.diameter(),
            lipschitz: None,
        };
        Some(robustness_lower_bound(&inp)?)
    } else {
        None
    };
    let l_floor = floor.as_ref().map(|f| f.value);
    let n_ok = floor.as_ref().is_some_and(|f| f.applicable);
    let report = ExperimentReport {
        schema: REPORT_SCHEMA.into(),
        config: cfg.echo(),
        config_hash: cfg.hash(),
        seed: run.seed,
        n: run.n,
        d: model.d(),
        k: loss.k,
        r: model.r(),
        p: class.p(),
        j: class.j_cert(),
        w: class.diameter(),
        sigma2,
        eps,
        l_lb,
        l_ub: upper.value,
        l_floor,
        n_required: floor.as_ref().map(|f| f.n_required),
        n_ok,
        ub_above_floor: l_floor.map(|f| upper.value >= f),
        verdict: verdict(training.achieved, n_ok, upper.value, l_floor),
        l_ub_detail: upper,
        training,
        decomposition,
        timing: Timing {
            total_seconds: start.elapsed().as_secs_f64(),
            train_seconds,
        },
    };
    Ok(ExperimentRun {
        report,
        params,
        samples,
        records,
    })
}

pub fn write_experiment(dir: &Path, cfg: &ExperimentConfig, run: &ExperimentRun) -> CliResult<()> {
    output::ensure_dir(dir)?;
    let rep = &run.report;
    let arch = cfg
        .class
        .as_ref()
        .map(|c| format!("{:?}", c.arch))
        .unwrap_or_default();
    output::write_params(
        dir,
        &run.params,
        &[
            ("config_hash", rep.config_hash.clone()),
            ("seed", rep.seed.to_string()),
            ("hidden", arch),
            ("d", rep.d.to_string()),
            ("k", rep.k.to_string()),
            ("p", rep.p.to_string()),
            ("layout", "per layer: weights row-major (out x in), then biases".into()),
        ],
    )?;
    if cfg.output.wants(Format::Json) {
        output::write_json(&dir.join("report.json"), rep)?;
    }
    if cfg.output.wants(Format::Csv) {
        output::write_samples_csv(&dir.join("samples.csv"), &run.samples)?;
        output::write_decomposition_csv(&dir.join("decomposition.csv"), &run.records)?;
        let rows: Vec<Vec<String>> = rep
            .training
            .history
            .iter()
            .map(|(s, g)| vec![s.to_string(), output::num(*g)])
            .collect();
        output::write_csv(&dir.join("training.csv"), &["step".into(), "gap".into()], &rows)?;
    }
    if cfg.output.wants(Format::Svg) {
        let hist: Vec<(f64, f64)> = rep.training.history.iter().map(|&(s, g)| (s as f64, g)).collect();
        let last = hist.last().map_or(1.0, |p| p.0.max(1.0));
        let gap = Plot::new("overfitting gap during training", "step", "sigma^2 - empirical loss")
            .series("gap", hist, Mark::Line)
            .series("eps", vec![(0.0, rep.eps), (last, rep.eps)], Mark::Line)
            .render();
        std::fs::write(dir.join("gap.svg"), gap)?;
        if let Some(floor) = rep.l_floor {
            let plot = Plot {
                log_x: true,
                log_y: true,
                diagonal: true,
                ..Plot::new("measured Lipschitz constant vs floor", "L_floor", "L")
            }
            .series("L_lb", vec![(floor, rep.l_lb)], Mark::Points)
            .series("L_ub", vec![(floor, rep.l_ub)], Mark::Points);
            std::fs::write(dir.join("lipschitz.svg"), plot.render())?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_rules() {
        assert_eq!(verdict(false, true, 0.0, Some(1.0)), Verdict::NotApplicable);
        assert_eq!(verdict(true, true, 0.5, None), Verdict::NotApplicable);
        assert_eq!(verdict(true, true, 0.5, Some(1.0)), Verdict::Violation);
        assert_eq!(verdict(true, false, 0.5, Some(1.0)), Verdict::Consistent);
        assert_eq!(verdict(true, true, 2.0, Some(1.0)), Verdict::Consistent);
    }
}
