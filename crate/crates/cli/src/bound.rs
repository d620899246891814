//! `compute-bound`: sample-size requirement, Lipschitz floor, the matching
//! specialization, and the failure-probability budget.

use lawrob_core::bounds::{
    classification_bound, classification_prefactor_denominator, failure_probability, regression_bound,
    robustness_lower_bound, sample_size_requirement, LowerBound, SampleSize, C1_CLASSIFICATION, C1_REGRESSION,
};
use lawrob_core::trace::TraceLine;
use lawrob_core::{BoundInputs, BoundReport, CorollaryInputs, LossKind};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantC1 {
    pub value: f64,
    pub from_config: bool,
    pub derivation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Specialization {
    /// `regression` or `classification`.
    pub kind: String,
    pub c1: ConstantC1,
    pub bound: LowerBound,
    /// Classification only: the improved (pre-softmax) variant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub improved: Option<LowerBound>,
    /// Classification only: ratio of the generic to the improved prefactor
    /// denominator, `K e^{2M} / 2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prefactor_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfConsistency {
    pub n: usize,
    pub l_floor: f64,
    pub delta_total: f64,
    pub delta: f64,
    pub pass: bool,
    pub report: BoundReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundOutput {
    pub config_hash: String,
    pub inputs: BoundInputs,
    pub sample_size: SampleSize,
    pub lower_bound: LowerBound,
    /// Failure budget at `run.n` and `run.lipschitz` (the floor when unset).
    pub failure: BoundReport,
    pub self_consistency: SelfConsistency,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub specialization: Option<Specialization>,
}

/// Theorem inputs read from the config: `d`, `r` from the model, `p`, `J`,
/// `W` from the class.
pub fn bound_inputs(cfg: &ExperimentConfig) -> CliResult<BoundInputs> {
    let loss = cfg.loss()?;
    let model = cfg.model(&loss)?;
    let class = cfg.class(&loss, &model)?;
    let eps = cfg
        .run
        .eps
        .ok_or_else(|| CliError::Config("compute-bound needs an absolute run.eps".into()))?;
    let inp = BoundInputs {
        constants: loss.constants()?,
        n: cfg.run.n,
        d: model.d(),
        p: class.p(),
        r: model.r(),
        eps,
        delta: cfg.run.delta,
        c: cfg.run.c_iso,
        big_c: cfg.run.big_c,
        j: class.j_cert(),
        w: class.diameter(),
        lipschitz: cfg.run.lipschitz,
    };
    inp.validate().map_err(CliError::config)?;
    Ok(inp)
}

fn specialization(cfg: &ExperimentConfig, inp: &BoundInputs) -> CliResult<Option<Specialization>> {
    let loss = cfg.loss()?;
    let (kind, default_c1, derivation) = match loss.kind {
        LossKind::Square => (
            "regression",
            C1_REGRESSION,
            "300 (m1 + m2 + 2 max(3 gamma, m3)(m0 + a0))^2 with square-loss constants is 300 (26 K M^2)^2, \
             so C1 = 300 * 26^2 = 202800 per K^2 M^4; the second branch 32768 K^3 M^4 r is dominated",
        ),
        LossKind::NegEntropy => (
            "classification",
            C1_CLASSIFICATION,
            "with negative-entropy constants the inner term is at most 14 sqrt(K) max(a0, 1 + |log alpha|), \
             so C1 = 300 * 14^2 = 58800",
        ),
        _ => return Ok(None),
    };
    let c1 = ConstantC1 {
        value: cfg.run.c1.unwrap_or(default_c1),
        from_config: cfg.run.c1.is_some(),
        derivation: derivation.into(),
    };
    let ci = CorollaryInputs {
        k: loss.k,
        m: loss.params.m,
        alpha: loss.params.alpha,
        j: inp.j,
        w: inp.w,
        n: inp.n,
        d: inp.d,
        p: inp.p,
        r: inp.r,
        eps: inp.eps,
        delta: inp.delta,
        c: inp.c,
        big_c: inp.big_c,
        c1: c1.value,
    };
    Ok(Some(if kind == "regression" {
        Specialization {
            kind: kind.into(),
            c1,
            bound: regression_bound(&ci)?,
            improved: None,
            prefactor_ratio: None,
        }
    } else {
        let generic = classification_prefactor_denominator(ci.k, ci.m, ci.c, ci.big_c, false);
        let improved = classification_prefactor_denominator(ci.k, ci.m, ci.c, ci.big_c, true);
        Specialization {
            kind: kind.into(),
            c1,
            bound: classification_bound(&ci, false)?,
            improved: Some(classification_bound(&ci, true)?),
            prefactor_ratio: Some(generic / improved),
        }
    }))
}

/// Failure budget at `n = n_required` and `L` equal to the floor there.
pub fn self_consistency(inp: &BoundInputs) -> CliResult<SelfConsistency> {
    let req = sample_size_requirement(inp)?;
    let n = usize::try_from(req.n_required)
        .map_err(|_| CliError::Numeric(format!("required sample size {} overflows", req.n_required)))?;
    let at_req = BoundInputs {
        n,
        lipschitz: None,
        ..inp.clone()
    };
    let l_floor = robustness_lower_bound(&at_req)?.value;
    let report = failure_probability(&BoundInputs {
        lipschitz: Some(l_floor),
        ..at_req
    })?;
    Ok(SelfConsistency {
        n,
        l_floor,
        delta_total: report.delta_total,
        delta: inp.delta,
        pass: report.delta_total <= inp.delta,
        report,
    })
}

pub fn compute_bound(cfg: &ExperimentConfig) -> CliResult<BoundOutput> {
    let inp = bound_inputs(cfg)?;
    let sample_size = sample_size_requirement(&inp)?;
    let lower_bound = robustness_lower_bound(&inp)?;
    let failure = failure_probability(&BoundInputs {
        lipschitz: Some(inp.lipschitz.unwrap_or(lower_bound.value)),
        ..inp.clone()
    })?;
    Ok(BoundOutput {
        config_hash: cfg.hash(),
        self_consistency: self_consistency(&inp)?,
        specialization: specialization(cfg, &inp)?,
        inputs: inp,
        sample_size,
        lower_bound,
        failure,
    })
}

/// Human-readable rendering of every formula used.
pub fn render_trace(out: &BoundOutput) -> String {
    let mut s = String::new();
    let mut section = |title: &str, lines: &[TraceLine]| {
        s.push_str(&format!("## {title}\n"));
        for l in lines {
            s.push_str(&format!("{} = {}\n    = {}\n    = {}\n", l.name, l.symbolic, l.substituted, l.value));
        }
    };
    section("sample size", &out.sample_size.trace);
    section("Lipschitz floor", &out.lower_bound.trace);
    section("failure probability", &out.failure.trace);
    if let Some(sp) = &out.specialization {
        section(&format!("{} specialization", sp.kind), &sp.bound.trace);
        if let Some(imp) = &sp.improved {
            section("improved classification", &imp.trace);
        }
        s.push_str(&format!("C1 = {} ({})\n", sp.c1.value, sp.c1.derivation));
        if sp.kind == "classification" {
            s.push_str(
                "note: the generic form carries 2 sqrt(K)(1 + 2M + log K) inside the log and the improved form \
                 sqrt(K)(1 + 2M + log K); neither is adjusted to match the other\n",
            );
        }
    }
    let sc = &out.self_consistency;
    s.push_str(&format!(
        "## self-consistency\nat n = {} and L = {}: delta_total = {} (delta = {}) -> {}\n",
        sc.n,
        sc.l_floor,
        sc.delta_total,
        sc.delta,
        if sc.pass { "ok" } else { "FAILED" }
    ));
    s
}
