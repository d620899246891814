//! Experiment configuration: TOML with `loss`, `model`, `class`, `run` and
//! `output` blocks.

use std::path::{Path, PathBuf};

use lawrob_core::function_class::ClassConfig;
use lawrob_core::sampler::ModelConfig;
use lawrob_core::{DataModel, FunctionClass, LossConfig, LossSpec};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<ClassConfig>,
    pub run: RunConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "defaults::n")]
    pub n: usize,
    /// Absolute overfitting margin / deviation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    /// Margin as a fraction of the noise floor (experiments only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_fraction: Option<f64>,
    #[serde(default = "defaults::delta")]
    pub delta: f64,
    #[serde(default = "defaults::trials")]
    pub trials: usize,
    /// Worker threads; never part of the config hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    /// Isoperimetry constant `c` of the covariates.
    #[serde(default = "defaults::one")]
    pub c_iso: f64,
    /// Constant `C` of the bounded-times-sub-Gaussian product fact.
    #[serde(default = "defaults::big_c")]
    pub big_c: f64,
    /// Absolute constant of the corollary sample-size premises.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c1: Option<f64>,
    /// Monte Carlo size for noise floors and gradient means.
    #[serde(default = "defaults::n_mc")]
    pub n_mc: usize,
    #[serde(default = "defaults::statements")]
    pub statements: Vec<String>,
    #[serde(default = "defaults::eps_multipliers")]
    pub eps_multipliers: Vec<f64>,
    #[serde(default = "defaults::identity_draws")]
    pub identity_draws: usize,
    #[serde(default = "defaults::samples_per_function")]
    pub samples_per_function: usize,
    #[serde(default = "defaults::triangle_cases")]
    pub triangle_cases: usize,
    #[serde(default = "defaults::fd_cases")]
    pub fd_cases: usize,
    /// Discrete models per loss in the optimality suite.
    #[serde(default = "defaults::optimality_models")]
    pub optimality_models: usize,
    #[serde(default = "defaults::grid_step")]
    pub grid_step: f64,
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    #[serde(default = "defaults::max_steps")]
    pub max_steps: usize,
    #[serde(default = "defaults::probes")]
    pub lipschitz_probes: usize,
    /// Lipschitz level at which `compute-bound` evaluates the failure
    /// probability; the floor itself when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<f64>,
    /// Negative control for the identity suite: flips the sign of one term.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub sabotage: bool,
}

mod defaults {
    pub fn n() -> usize {
        200
    }
    pub fn delta() -> f64 {
        0.1
    }
    pub fn trials() -> usize {
        10_000
    }
    pub fn one() -> f64 {
        1.0
    }
    pub fn big_c() -> f64 {
        2.0
    }
    pub fn n_mc() -> usize {
        20_000
    }
    pub fn statements() -> Vec<String> {
        ["Obs33", "Obs34", "Obs35", "Lem36"].map(String::from).to_vec()
    }
    pub fn eps_multipliers() -> Vec<f64> {
        vec![0.1, 0.2, 0.4]
    }
    pub fn identity_draws() -> usize {
        100_000
    }
    pub fn samples_per_function() -> usize {
        100
    }
    pub fn triangle_cases() -> usize {
        10_000
    }
    pub fn fd_cases() -> usize {
        1000
    }
    pub fn optimality_models() -> usize {
        10
    }
    pub fn grid_step() -> f64 {
        0.01
    }
    pub fn lr() -> f64 {
        0.05
    }
    pub fn max_steps() -> usize {
        20_000
    }
    pub fn probes() -> usize {
        1000
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
    Svg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: default_dir(),
            formats: default_formats(),
        }
    }
}

impl OutputConfig {
    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub formats: Vec<Format>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.run.seed = s;
        }
        if let Some(dir) = &o.out {
            self.output.dir = dir.clone();
        }
        if o.jobs.is_some() {
            self.run.jobs = o.jobs;
        }
        if !o.formats.is_empty() {
            let mut f = o.formats.clone();
            f.sort();
            f.dedup();
            self.output.formats = f;
        }
    }

    fn validate(&self) -> CliResult<()> {
        let r = &self.run;
        let bad = |m: String| Err(CliError::Config(m));
        if r.n == 0 {
            return bad("run.n must be positive".into());
        }
        if !(r.delta > 0.0 && r.delta < 1.0) {
            return bad(format!("run.delta = {} must lie in (0, 1)", r.delta));
        }
        if let Some(e) = r.eps {
            if !(e > 0.0 && e.is_finite()) {
                return bad(format!("run.eps = {e} must be positive"));
            }
        }
        if let Some(f) = r.eps_fraction {
            if !(f > 0.0 && f.is_finite()) {
                return bad(format!("run.eps_fraction = {f} must be positive"));
            }
        }
        if r.eps.is_some() && r.eps_fraction.is_some() {
            return bad("set either run.eps or run.eps_fraction, not both".into());
        }
        if r.jobs == Some(0) {
            return bad("run.jobs must be at least 1".into());
        }
        for (name, v) in [("run.c_iso", r.c_iso), ("run.big_c", r.big_c), ("run.lr", r.lr), ("run.grid_step", r.grid_step)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be positive"));
            }
        }
        if r.eps_multipliers.iter().any(|m| !(*m > 0.0)) {
            return bad("run.eps_multipliers must be positive".into());
        }
        Ok(())
    }

    pub fn jobs(&self) -> usize {
        self.run.jobs.unwrap_or(1)
    }

    pub fn loss(&self) -> CliResult<LossSpec> {
        let block = self.loss.as_ref().ok_or_else(|| CliError::Config("missing [loss] block".into()))?;
        LossSpec::try_from(block).map_err(CliError::config)
    }

    pub fn model(&self, loss: &LossSpec) -> CliResult<DataModel> {
        let block = self.model.as_ref().ok_or_else(|| CliError::Config("missing [model] block".into()))?;
        block.build(loss, self.run.seed).map_err(CliError::config)
    }

    /// The class block, with inputs of dimension `d`. The certified input
    /// radius defaults to three times the typical covariate norm plus the
    /// largest component mean.
    pub fn class(&self, loss: &LossSpec, model: &DataModel) -> CliResult<FunctionClass> {
        let block = self.class.as_ref().ok_or_else(|| CliError::Config("missing [class] block".into()))?;
        let mean_norm = model
            .means()
            .iter()
            .map(|m| lawrob_core::linalg::norm(m))
            .fold(0.0, f64::max);
        let class = block
            .build(model.d(), loss.k, loss.params.m, 3.0 + mean_norm)
            .map_err(CliError::config)?;
        if class.k() != loss.k {
            return Err(CliError::Config(format!(
                "class outputs {} values, loss has K = {}",
                class.k(),
                loss.k
            )));
        }
        Ok(class)
    }

    /// Config as JSON without the settings that cannot change any number:
    /// `run.jobs` and `output.dir`.
    fn semantic(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(run) = v.get_mut("run").and_then(Value::as_object_mut) {
            run.remove("jobs");
        }
        if let Some(out) = v.get_mut("output").and_then(Value::as_object_mut) {
            out.remove("dir");
        }
        v
    }

    /// SHA-256 of the canonical JSON form of the numeric settings. Output
    /// formats are excluded as well.
    pub fn hash(&self) -> String {
        let mut v = self.semantic();
        if let Some(m) = v.as_object_mut() {
            m.remove("output");
        }
        hex::encode(Sha256::digest(canonical_json(&v).as_bytes()))
    }

    /// JSON echo of the config as stored in reports (keys sorted).
    pub fn echo(&self) -> Value {
        sort_keys(&self.semantic())
    }
}

/// Compact JSON with object keys in lexicographic order at every level.
pub fn canonical_json(v: &Value) -> String {
    serde_json::to_string(&sort_keys(v)).expect("json value serializes")
}

pub fn sort_keys(v: &Value) -> Value {
    match v {
        Value::Object(m) => {
            let mut keys: Vec<&String> = m.keys().collect();
            keys.sort();
            let mut out = serde_json::Map::new();
            for k in keys {
                out.insert(k.clone(), sort_keys(&m[k]));
            }
            Value::Object(out)
        }
        Value::Array(a) => Value::Array(a.iter().map(sort_keys).collect()),
        other => other.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[loss]
kind = "square"
K = 1
M = 1.0

[model]
d = 4
r = 1
label_law = "regression"
noise_scale = 0.5

[class]
arch = [8]
param_box = 1.0
head = "clip"

[run]
seed = 3
n = 50
eps = 0.1
"#;

    #[test]
    fn reordered_keys_hash_equal() {
        let a = ExperimentConfig::from_toml(BASE).unwrap();
        let reordered = r#"
[run]
eps = 0.1
n = 50
seed = 3

[class]
head = "clip"
param_box = 1.0
arch = [8]

[model]
noise_scale = 0.5
label_law = "regression"
r = 1
d = 4

[loss]
M = 1.0
K = 1
kind = "square"
"#;
        let b = ExperimentConfig::from_toml(reordered).unwrap();
        assert_eq!(a.hash(), b.hash());
    }

    #[test]
    fn execution_settings_do_not_change_the_hash_but_seed_does() {
        let a = ExperimentConfig::from_toml(BASE).unwrap();
        let mut b = a.clone();
        b.apply(&Overrides {
            jobs: Some(4),
            out: Some("elsewhere".into()),
            formats: vec![Format::Svg],
            seed: None,
        });
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.echo()["output"].get("dir"), None);
        b.apply(&Overrides {
            seed: Some(4),
            ..Default::default()
        });
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn rejects_bad_blocks() {
        assert!(matches!(
            ExperimentConfig::from_toml("[run]\nn = 5\n"),
            Err(CliError::Config(_))
        ));
        let extra = format!("{BASE}\nbogus = 1\n");
        assert!(ExperimentConfig::from_toml(&extra).is_err());
        let zero_n = BASE.replace("n = 50", "n = 0");
        assert!(ExperimentConfig::from_toml(&zero_n).is_err());
    }

    #[test]
    fn builds_blocks() {
        let cfg = ExperimentConfig::from_toml(BASE).unwrap();
        let loss = cfg.loss().unwrap();
        let model = cfg.model(&loss).unwrap();
        let class = cfg.class(&loss, &model).unwrap();
        assert_eq!(class.arch(), &[4, 8, 1]);
        assert_eq!(model.seed(), 3);
        assert_eq!(class.input_radius(), 3.0);
    }
}
