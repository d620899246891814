//! Randomized identity suites: the risk decomposition, the three-point
//! equality, generator gradients against finite differences, and
//! conditional-mean optimality on discrete models.

use lawrob_core::decomposition::{decompose, mean_grad_f};
use lawrob_core::discrete::{check_optimality, random_prediction, DiscreteModel};
use lawrob_core::rng::{self, stream_id, tags, StreamRng};
use lawrob_core::sampler::{Encoding, LabelLaw, MeanMap, MeansSpec, ProbMap};
use lawrob_core::{DataModel, FunctionClass, Head, LossConfig, LossKind, LossSpec};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const IDENTITY_TOL: f64 = 1e-9;
pub const TRIANGLE_TOL: f64 = 1e-9;
pub const FD_TOL: f64 = 1e-6;
pub const FD_STEP: f64 = 1e-5;

pub const FAMILIES: [&str; 4] = ["square", "mahalanobis", "neg_entropy", "binary_entropy"];

// Sub-stream offsets of the suites inside the SUITE tag.
const IDENTITY_BASE: u64 = 0;
const TRIANGLE_BASE: u64 = 1 << 32;
const FD_BASE: u64 = 2 << 32;
const OPTIMALITY_BASE: u64 = 3 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub suite: String,
    pub loss: String,
    pub cases: usize,
    pub worst: f64,
    pub tolerance: f64,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_failure: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub seed: u64,
    pub sabotage: bool,
    pub results: Vec<SuiteResult>,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct SuiteSizes {
    pub identity_draws: usize,
    pub samples_per_function: usize,
    pub triangle_cases: usize,
    pub fd_cases: usize,
    pub optimality_models: usize,
    pub grid_step: f64,
}

impl SuiteSizes {
    pub fn from_run(r: &RunConfig) -> Self {
        SuiteSizes {
            identity_draws: r.identity_draws,
            samples_per_function: r.samples_per_function,
            triangle_cases: r.triangle_cases,
            fd_cases: r.fd_cases,
            optimality_models: r.optimality_models,
            grid_step: r.grid_step,
        }
    }

    fn validate(&self) -> CliResult<()> {
        for (name, v) in [
            ("run.identity_draws", self.identity_draws),
            ("run.samples_per_function", self.samples_per_function),
            ("run.triangle_cases", self.triangle_cases),
            ("run.fd_cases", self.fd_cases),
            ("run.optimality_models", self.optimality_models),
        ] {
            if v == 0 {
                return Err(CliError::Config(format!("{name} must be positive")));
            }
        }
        if !(self.grid_step > 0.0 && self.grid_step < 1.0) {
            return Err(CliError::Config("run.grid_step must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// A random loss of the given family.
pub fn random_loss(family: usize, rng: &mut StreamRng) -> LossSpec {
    match family % 4 {
        0 => LossSpec::square(rng.random_range(1..=3), rng.random_range(0.5..2.0)).expect("valid square loss"),
        1 => {
            let k = rng.random_range(2..=3);
            let b: Vec<f64> = (0..k * k).map(|_| rng.random_range(-1.0..1.0)).collect();
            // B B^T + 0.1 I is symmetric positive definite
            let mut a = vec![0.0; k * k];
            for i in 0..k {
                for j in 0..k {
                    a[i * k + j] = (0..k).map(|l| b[i * k + l] * b[j * k + l]).sum::<f64>();
                }
                a[i * k + i] += 0.1;
            }
            LossSpec::mahalanobis(a, k, rng.random_range(0.5..2.0)).expect("valid mahalanobis loss")
        }
        2 => {
            let k = rng.random_range(2..=4);
            let alpha = rng.random_range(0.01..0.5 / k as f64);
            LossSpec::neg_entropy(k, rng.random_range(0.5..1.5), alpha).expect("valid entropy loss")
        }
        _ => LossSpec::binary_entropy(rng.random_range(0.5..3.0), rng.random_range(0.01..0.3)).expect("valid binary loss"),
    }
}

/// A random model whose labels pair with `loss`.
pub fn random_model(loss: &LossSpec, rng: &mut StreamRng) -> DataModel {
    let d = rng.random_range(1..=8);
    let r = rng.random_range(1..=3);
    let raw: Vec<f64> = (0..r).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let drift: f64 = 1.0 - weights.iter().sum::<f64>();
    weights[0] += drift;
    let means = MeansSpec::Spread(rng.random_range(0.0..2.0))
        .materialize(d, r)
        .expect("spread means");
    let law = match loss.kind {
        LossKind::Square | LossKind::Mahalanobis { .. } => {
            let m = loss.params.m;
            LabelLaw::Regression {
                k: loss.k,
                map: if rng.random::<bool>() { MeanMap::Tanh } else { MeanMap::Clip },
                gain: rng.random_range(0.2..3.0),
                noise_scale: rng.random_range(0.0..0.6) * m,
                m,
            }
        }
        LossKind::NegEntropy | LossKind::BinaryEntropy => {
            let binary = matches!(loss.kind, LossKind::BinaryEntropy);
            let classes = if binary { 2 } else { loss.k };
            let alpha = loss.params.alpha;
            LabelLaw::Classification {
                classes,
                probs: ProbMap::SoftFloor {
                    temperature: rng.random_range(0.2..2.0),
                },
                alpha,
                encoding: if binary { Encoding::Binary } else { Encoding::OneHot },
            }
        }
    };
    DataModel::new(d, weights, means, law, rng.random()).expect("valid random model")
}

/// A random class matching the loss's range.
pub fn random_class(loss: &LossSpec, d: usize, rng: &mut StreamRng) -> FunctionClass {
    let m = loss.params.m;
    let head = match loss.kind {
        LossKind::Square | LossKind::Mahalanobis { .. } => Head::Clip {
            m,
            smooth: rng.random::<bool>(),
        },
        LossKind::NegEntropy => Head::Softmax { m },
        LossKind::BinaryEntropy => Head::Sigmoid { m },
    };
    let h = rng.random_range(2..=16);
    FunctionClass::new(vec![d, h, loss.k], vec![rng.random_range(0.3..2.0)], head, 3.0).expect("valid class")
}

fn loss_echo(loss: &LossSpec) -> Value {
    serde_json::to_value(LossConfig::from(loss)).unwrap_or(Value::Null)
}

#[derive(Default)]
struct Acc {
    cases: usize,
    worst: f64,
    first: Option<(u64, Value)>,
}

impl Acc {
    fn merge(mut self, other: Acc) -> Acc {
        self.cases += other.cases;
        self.worst = self.worst.max(other.worst);
        self.first = match (self.first, other.first) {
            (Some(a), Some(b)) => Some(if a.0 <= b.0 { a } else { b }),
            (a, b) => a.or(b),
        };
        self
    }

    fn record(&mut self, id: u64, value: f64, tol: f64, case: impl FnOnce() -> Value) {
        self.cases += 1;
        // NaN counts as a failure
        let v = if value.is_nan() { f64::INFINITY } else { value };
        self.worst = self.worst.max(v);
        if !(v <= tol) && self.first.as_ref().is_none_or(|f| id < f.0) {
            self.first = Some((id, case()));
        }
    }

    fn finish(self, suite: &str, loss: &str, tol: f64) -> SuiteResult {
        SuiteResult {
            suite: suite.into(),
            loss: loss.into(),
            cases: self.cases,
            worst: self.worst,
            tolerance: tol,
            pass: self.first.is_none() && self.worst <= tol,
            first_failure: self.first.map(|f| f.1),
        }
    }
}

/// One random (loss, model, f) triple and `count` samples from it.
fn identity_triple(seed: u64, idx: u64, count: usize, sabotage: bool) -> CliResult<Acc> {
    let mut rng = rng::stream(seed, stream_id(tags::SUITE, IDENTITY_BASE + idx));
    let loss = random_loss(idx as usize, &mut rng);
    let model = random_model(&loss, &mut rng);
    let class = random_class(&loss, model.d(), &mut rng);
    let net = class.realize(&class.random_params(&mut rng))?;
    let f = |x: &[f64]| net.eval(x);
    let sigma2 = model.noise_floor(&loss, 1000, stream_id(tags::NOISE_FLOOR, idx))?.sigma2;
    let grads = mean_grad_f(&loss, &model, f, 1000, stream_id(tags::GRAD_MEAN, idx), false)?;
    let samples = model.sample_with(count, &mut rng);
    let mut acc = Acc::default();
    for (j, s) in samples.iter().enumerate() {
        let rec = decompose(&loss, &model, f, s, sigma2, &grads.overall)?;
        let residual = if sabotage {
            let flipped = rec.terms_sum() - 2.0 * rec.gamma1;
            let scale = 1.0
                + rec.z.abs()
                + rec.sigma2.abs()
                + [rec.phi1, rec.phi2, rec.gamma1, rec.gamma2, rec.gamma3]
                    .iter()
                    .map(|v| v.abs())
                    .sum::<f64>();
            (rec.z - rec.sigma2 - flipped).abs() / scale
        } else {
            rec.residual
        };
        acc.record(idx, residual, IDENTITY_TOL, || {
            json!({
                "suite": "decomposition",
                "triple": idx,
                "sample": j,
                "loss": loss_echo(&loss),
                "d": model.d(),
                "r": model.r(),
                "x": s.x,
                "y": s.y,
                "record": rec,
                "residual": residual,
            })
        });
    }
    Ok(acc)
}

fn identity_suite(seed: u64, sizes: &SuiteSizes, sabotage: bool) -> CliResult<Vec<SuiteResult>> {
    let spf = sizes.samples_per_function;
    let triples = sizes.identity_draws.div_ceil(spf);
    let accs: Vec<(usize, Acc)> = (0..triples)
        .into_par_iter()
        .map(|t| {
            let count = spf.min(sizes.identity_draws - t * spf);
            identity_triple(seed, t as u64, count, sabotage).map(|a| (t % 4, a))
        })
        .collect::<CliResult<_>>()?;
    let mut per_family: Vec<Acc> = (0..4).map(|_| Acc::default()).collect();
    for (fam, acc) in accs {
        let slot = std::mem::take(&mut per_family[fam]);
        per_family[fam] = slot.merge(acc);
    }
    Ok(per_family
        .into_iter()
        .enumerate()
        .map(|(i, a)| a.finish("decomposition", FAMILIES[i], IDENTITY_TOL))
        .collect())
}

fn interior_point(loss: &LossSpec, rng: &mut StreamRng) -> Vec<f64> {
    let mut y = random_prediction(loss, rng);
    if matches!(loss.kind, LossKind::Square | LossKind::Mahalanobis { .. }) {
        // keep finite-difference steps inside the box
        y.iter_mut().for_each(|v| *v *= 0.99);
    }
    y
}

fn triangle_case(seed: u64, family: usize, i: u64) -> CliResult<(f64, Value)> {
    let mut rng = rng::stream(seed, stream_id(tags::SUITE, TRIANGLE_BASE + ((family as u64) << 28) + i));
    let loss = random_loss(family, &mut rng);
    let (x, y, z) = (
        interior_point(&loss, &mut rng),
        interior_point(&loss, &mut rng),
        interior_point(&loss, &mut rng),
    );
    let res = loss.triangle_residual(&x, &y, &z)?;
    let scale = 1.0 + loss.divergence(&x, &y)? + loss.divergence(&x, &z)? + loss.divergence(&z, &y)?;
    let v = res.abs() / scale;
    Ok((v, json!({"suite": "triangle", "case": i, "loss": loss_echo(&loss), "x": x, "y": y, "z": z, "residual": v})))
}

fn fd_case(seed: u64, family: usize, i: u64) -> CliResult<(f64, Value)> {
    let mut rng = rng::stream(seed, stream_id(tags::SUITE, FD_BASE + ((family as u64) << 28) + i));
    let loss = random_loss(family, &mut rng);
    let y = interior_point(&loss, &mut rng);
    let k = loss.k;
    let mut v = vec![0.0; k];
    match loss.kind {
        // generator lives on the simplex: differentiate along e_i - e_j
        LossKind::NegEntropy => {
            let a = rng.random_range(0..k);
            let b = (a + rng.random_range(1..k)) % k;
            v[a] = 1.0;
            v[b] = -1.0;
        }
        _ => v[rng.random_range(0..k)] = 1.0,
    }
    let shift = |t: f64| -> Vec<f64> { y.iter().zip(&v).map(|(a, b)| a + t * b).collect() };
    let fd = (loss.phi(&shift(FD_STEP))? - loss.phi(&shift(-FD_STEP))?) / (2.0 * FD_STEP);
    let g = loss.gradient(&y)?;
    let an: f64 = g.iter().zip(&v).map(|(a, b)| a * b).sum();
    let err = (fd - an).abs() / an.abs().max(1.0);
    Ok((err, json!({"suite": "gradient_fd", "case": i, "loss": loss_echo(&loss), "y": y, "direction": v, "fd": fd, "analytic": an, "error": err})))
}

fn pointwise_suite(
    name: &str,
    cases: usize,
    tol: f64,
    seed: u64,
    case: fn(u64, usize, u64) -> CliResult<(f64, Value)>,
) -> CliResult<Vec<SuiteResult>> {
    (0..4)
        .map(|fam| {
            let vals: Vec<(f64, Value)> = (0..cases as u64)
                .into_par_iter()
                .map(|i| case(seed, fam, i))
                .collect::<CliResult<_>>()?;
            let mut acc = Acc::default();
            for (i, (v, c)) in vals.into_iter().enumerate() {
                acc.record(i as u64, v, tol, || c);
            }
            Ok(acc.finish(name, FAMILIES[fam], tol))
        })
        .collect()
}

/// Small-`K` loss for the optimality grid, which grows like `(1/step)^K`.
fn grid_loss(family: usize, rng: &mut StreamRng) -> LossSpec {
    match family {
        0 => LossSpec::square(rng.random_range(1..=2), rng.random_range(0.5..2.0)).expect("valid square loss"),
        1 => {
            let a = vec![rng.random_range(1.0..3.0), 0.4, 0.4, rng.random_range(0.5..2.0)];
            LossSpec::mahalanobis(a, 2, rng.random_range(0.5..1.5)).expect("valid mahalanobis loss")
        }
        _ => random_loss(family, rng),
    }
}

fn optimality_suite(seed: u64, sizes: &SuiteSizes) -> CliResult<Vec<SuiteResult>> {
    (0..4)
        .map(|fam| {
            let reports: Vec<(f64, Value)> = (0..sizes.optimality_models as u64)
                .into_par_iter()
                .map(|i| -> CliResult<(f64, Value)> {
                    let mut rng = rng::stream(seed, stream_id(tags::SUITE, OPTIMALITY_BASE + ((fam as u64) << 28) + i));
                    let loss = grid_loss(fam, &mut rng);
                    let nx = rng.random_range(1..=5);
                    let ny = rng.random_range(1..=4);
                    let r = rng.random_range(1..=3);
                    let model = DiscreteModel::random(&loss, nx, ny, r, &mut rng)?;
                    let rep = check_optimality(&model, &loss, sizes.grid_step)?;
                    let rel = rep.undercut / (1.0 + rep.risk_mean.abs());
                    Ok((rel, json!({"suite": "optimality", "case": i, "loss": loss_echo(&loss), "model": model, "report": rep})))
                })
                .collect::<CliResult<_>>()?;
            let mut acc = Acc::default();
            for (i, (v, c)) in reports.into_iter().enumerate() {
                acc.record(i as u64, v, 1e-12, || c);
            }
            Ok(acc.finish("optimality", FAMILIES[fam], 1e-12))
        })
        .collect()
}

/// Runs every suite; results are independent of the thread count.
pub fn run_identity_suites(seed: u64, sizes: &SuiteSizes, sabotage: bool) -> CliResult<IdentityReport> {
    sizes.validate()?;
    let mut results = identity_suite(seed, sizes, sabotage)?;
    results.extend(pointwise_suite("triangle", sizes.triangle_cases, TRIANGLE_TOL, seed, triangle_case)?);
    results.extend(pointwise_suite("gradient_fd", sizes.fd_cases, FD_TOL, seed, fd_case)?);
    results.extend(optimality_suite(seed, sizes)?);
    let pass = results.iter().all(|r| r.pass);
    Ok(IdentityReport {
        seed,
        sabotage,
        results,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SuiteSizes {
        SuiteSizes {
            identity_draws: 400,
            samples_per_function: 50,
            triangle_cases: 100,
            fd_cases: 100,
            optimality_models: 2,
            grid_step: 0.05,
        }
    }

    #[test]
    fn suites_pass_and_sabotage_fails() {
        let rep = run_identity_suites(1, &small(), false).unwrap();
        assert!(rep.pass, "{:#?}", rep.results.iter().filter(|r| !r.pass).collect::<Vec<_>>());
        assert_eq!(rep.results.len(), 16);
        let total: usize = rep.results.iter().filter(|r| r.suite == "decomposition").map(|r| r.cases).sum();
        assert_eq!(total, 400);
        let bad = run_identity_suites(1, &small(), true).unwrap();
        assert!(!bad.pass);
        assert!(bad.results.iter().any(|r| r.first_failure.is_some()));
    }

    #[test]
    fn zero_sizes_are_config_errors() {
        let mut s = small();
        s.fd_cases = 0;
        assert!(matches!(run_identity_suites(1, &s, false), Err(CliError::Config(_))));
    }
}
