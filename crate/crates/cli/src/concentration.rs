//! `check-concentration`: Monte Carlo tail frequencies against the
//! analytic bounds.

use lawrob_core::concentration::{run_tail_check, TailCheckSetup};
use lawrob_core::decomposition::mean_grad_f;
use lawrob_core::function_class::lipschitz_upper_bound;
use lawrob_core::rng::{self, stream_id, tags};
use lawrob_core::sampler::NoiseFloor;
use lawrob_core::{StatementId, TailReport};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatementError {
    pub statement_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub config_hash: String,
    pub seed: u64,
    pub n: usize,
    pub trials: usize,
    pub sigma2: NoiseFloor,
    /// Certified Lipschitz constant of the fixed predictor.
    pub lipschitz: f64,
    pub c_iso: f64,
    pub c_fact: f64,
    pub reports: Vec<TailReport>,
    pub errors: Vec<StatementError>,
    /// No report failed (vacuous reports never fail).
    pub pass: bool,
}

/// Statement ids from the command line, or from `run.statements`.
pub fn statement_ids(cfg: &ExperimentConfig, requested: &[String]) -> CliResult<Vec<StatementId>> {
    let names = if requested.is_empty() { &cfg.run.statements } else { requested };
    if names.is_empty() {
        return Err(CliError::Config("no statements requested".into()));
    }
    let mut ids = Vec::new();
    for s in names {
        let id = StatementId::parse(s).ok_or_else(|| {
            let known: Vec<&str> = StatementId::ALL.iter().map(|i| i.name()).collect();
            CliError::Config(format!("unknown statement {s:?}; known: {}", known.join(", ")))
        })?;
        if !ids.contains(&id) {
            ids.push(id);
        }
    }
    Ok(ids)
}

pub fn run_concentration(cfg: &ExperimentConfig, ids: &[StatementId]) -> CliResult<ConcentrationReport> {
    let run = &cfg.run;
    let loss = cfg.loss()?;
    let model = cfg.model(&loss)?;
    let class = cfg.class(&loss, &model)?;
    let seed = run.seed;
    let net = class.realize(&class.random_params(&mut rng::stream(seed, stream_id(tags::INIT, 0))))?;
    let lipschitz = lipschitz_upper_bound(&net).value;
    let predictor = |x: &[f64]| net.eval(x);
    let sigma2 = model.noise_floor(&loss, run.n_mc, stream_id(tags::NOISE_FLOOR, 0))?;
    let grads = if ids.iter().any(|id| id.needs_predictor()) {
        Some(mean_grad_f(
            &loss,
            &model,
            predictor,
            run.n_mc,
            stream_id(tags::GRAD_MEAN, 0),
            model.r() > 1,
        )?)
    } else {
        None
    };
    let setup = TailCheckSetup {
        loss: &loss,
        constants: loss.constants()?,
        model: &model,
        predictor: Some(&predictor),
        lipschitz,
        grads,
        sigma2: sigma2.sigma2,
        n: run.n,
        trials: run.trials,
        c_iso: run.c_iso,
        c_fact: run.big_c,
        stream_base: 0,
    };
    let mut feasible = Vec::new();
    let mut errors = Vec::new();
    for &id in ids {
        match setup.validate(&[id]) {
            Ok(()) => feasible.push(id),
            Err(e) => errors.push(StatementError {
                statement_id: id.name().into(),
                error: e.to_string(),
            }),
        }
    }
    let reports = if feasible.is_empty() {
        Vec::new()
    } else {
        run_tail_check(&setup, &feasible, &run.eps_multipliers)?
    };
    let pass = reports.iter().all(|r| r.pass);
    Ok(ConcentrationReport {
        config_hash: cfg.hash(),
        seed,
        n: run.n,
        trials: run.trials,
        sigma2,
        lipschitz,
        c_iso: run.c_iso,
        c_fact: run.big_c,
        reports,
        errors,
        pass,
    })
}
