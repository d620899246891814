//! Mixture data model `G -> X -> Y`.
//!
//! Covariates come from a mixture of normalized Gaussians `N(mu_k, I/d)`;
//! labels depend on `X` only, through a law whose conditional mean is known
//! in closed form.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bregman::{LossKind, LossSpec};
use crate::concentration::{subgaussian_estimate, SubGaussEstimate};
use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Index of the component that generated `x`.
    pub g: usize,
}

/// Regression mean map `g: R^d -> [-(M-s), M-s]^K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanMap {
    Zero,
    /// `g_k(x) = clip(gain * x_{k mod d})`
    Clip,
    /// `g_k(x) = (M - s) tanh(gain * x_{k mod d})`
    Tanh,
}

/// Conditional class probabilities `q(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ProbMap {
    Constant(Vec<f64>),
    /// `q(x) = alpha + (1 - K alpha) softmax(temperature * sqrt(d) * x_{l mod d})`
    SoftFloor { temperature: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    /// `K`-dimensional one-hot vectors.
    OneHot,
    /// Two classes encoded as the scalar `1{class = 1}`.
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LabelLaw {
    /// `Y = g(X) + xi`, `xi` uniform on `[-s, s]^K`.
    Regression {
        k: usize,
        map: MeanMap,
        gain: f64,
        noise_scale: f64,
        /// Label box half-width.
        m: f64,
    },
    Classification {
        classes: usize,
        probs: ProbMap,
        alpha: f64,
        encoding: Encoding,
    },
}

impl LabelLaw {
    /// Dimension of the label vector.
    pub fn k(&self) -> usize {
        match self {
            LabelLaw::Regression { k, .. } => *k,
            LabelLaw::Classification {
                encoding: Encoding::Binary,
                ..
            } => 1,
            LabelLaw::Classification { classes, .. } => *classes,
        }
    }

    /// True when the conditional law of `Y` does not depend on `x`.
    fn x_free(&self) -> bool {
        match self {
            LabelLaw::Regression { map, .. } => *map == MeanMap::Zero,
            LabelLaw::Classification { probs, .. } => matches!(probs, ProbMap::Constant(_)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataModel {
    d: usize,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    label_law: LabelLaw,
    seed: u64,
    #[serde(skip)]
    cumulative: Vec<f64>,
}

impl DataModel {
    pub fn new(
        d: usize,
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        label_law: LabelLaw,
        seed: u64,
    ) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("model.d must be positive"));
        }
        if weights.is_empty() || weights.len() != means.len() {
            return Err(Error::invalid(format!(
                "model has {} weights but {} means",
                weights.len(),
                means.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("mixture weights must be nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("mixture weights sum to {total}, not 1")));
        }
        for mu in &means {
            if mu.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: mu.len(),
                });
            }
        }
        validate_law(&label_law)?;
        let mut cumulative = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for w in &weights {
            acc += w;
            cumulative.push(acc);
        }
        Ok(DataModel {
            d,
            weights,
            means,
            label_law,
            seed,
            cumulative,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn r(&self) -> usize {
        self.weights.len()
    }

    pub fn k(&self) -> usize {
        self.label_law.k()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn label_law(&self) -> &LabelLaw {
        &self.label_law
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn rng(&self, stream: u64) -> StreamRng {
        rng::stream(self.seed, stream)
    }

    /// Checks that the model's labels and conditional means live where `loss`
    /// needs them.
    pub fn check_compatible(&self, loss: &LossSpec) -> Result<()> {
        if loss.k != self.k() {
            return Err(Error::DimensionMismatch {
                expected: loss.k,
                got: self.k(),
            });
        }
        match (&self.label_law, &loss.kind) {
            (
                LabelLaw::Regression { m, .. },
                LossKind::Square | LossKind::Mahalanobis { .. },
            ) => {
                if *m > loss.params.m + 1e-12 {
                    return Err(Error::invalid(format!(
                        "regression labels reach {m} but the loss box is [-{0}, {0}]",
                        loss.params.m
                    )));
                }
                Ok(())
            }
            (
                LabelLaw::Classification {
                    alpha,
                    encoding: Encoding::OneHot,
                    ..
                },
                LossKind::NegEntropy,
            )
            | (
                LabelLaw::Classification {
                    alpha,
                    encoding: Encoding::Binary,
                    ..
                },
                LossKind::BinaryEntropy,
            ) => {
                if *alpha + 1e-15 < loss.params.alpha {
                    return Err(Error::invalid(format!(
                        "model label floor {alpha} is below the loss floor {}",
                        loss.params.alpha
                    )));
                }
                Ok(())
            }
            _ => Err(Error::invalid(format!(
                "label law does not pair with the {} loss",
                loss.kind.name()
            ))),
        }
    }

    fn draw_component(&self, rng: &mut StreamRng) -> usize {
        let u: f64 = rng.random();
        let last = self.cumulative.len() - 1;
        self.cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(last)
            .min(last)
    }

    fn draw_x(&self, g: usize, rng: &mut StreamRng) -> Vec<f64> {
        let scale = 1.0 / (self.d as f64).sqrt();
        self.means[g]
            .iter()
            .map(|mu| {
                let z: f64 = rng.sample(StandardNormal);
                mu + scale * z
            })
            .collect()
    }

    fn draw_y(&self, x: &[f64], rng: &mut StreamRng) -> Vec<f64> {
        match &self.label_law {
            LabelLaw::Regression { noise_scale, .. } => {
                let mut y = self.conditional_mean(x);
                if *noise_scale > 0.0 {
                    for v in &mut y {
                        *v += rng.random_range(-*noise_scale..=*noise_scale);
                    }
                }
                y
            }
            LabelLaw::Classification { encoding, .. } => {
                let q = self.class_probs(x);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut class = q.len() - 1;
                for (l, p) in q.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        class = l;
                        break;
                    }
                }
                encode(class, q.len(), *encoding)
            }
        }
    }

    /// `n` i.i.d. samples from stream `stream`; equal inputs give bit-identical
    /// output.
    pub fn sample_batch(&self, n: usize, stream: u64) -> Vec<Sample> {
        let mut rng = self.rng(stream);
        self.sample_with(n, &mut rng)
    }

    pub fn sample_with(&self, n: usize, rng: &mut StreamRng) -> Vec<Sample> {
        (0..n)
            .map(|_| {
                let g = self.draw_component(rng);
                let x = self.draw_x(g, rng);
                let y = self.draw_y(&x, rng);
                Sample { x, y, g }
            })
            .collect()
    }

    /// Covariates from component `g` only.
    pub fn sample_component(&self, g: usize, n: usize, rng: &mut StreamRng) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.draw_x(g, rng)).collect()
    }

    /// Class probabilities `q(x)` (classification laws only; empty otherwise).
    pub fn class_probs(&self, x: &[f64]) -> Vec<f64> {
        match &self.label_law {
            LabelLaw::Regression { .. } => Vec::new(),
            LabelLaw::Classification {
                classes,
                probs,
                alpha,
                ..
            } => match probs {
                ProbMap::Constant(q) => q.clone(),
                ProbMap::SoftFloor { temperature } => {
                    let s = temperature * (self.d as f64).sqrt();
                    let logits: Vec<f64> = (0..*classes).map(|l| s * x[l % self.d]).collect();
                    let sm = softmax(&logits);
                    let mass = 1.0 - *classes as f64 * alpha;
                    sm.into_iter().map(|p| alpha + mass * p).collect()
                }
            },
        }
    }

    /// Closed-form `E[Y | X = x]`.
    pub fn conditional_mean(&self, x: &[f64]) -> Vec<f64> {
        match &self.label_law {
            LabelLaw::Regression {
                k,
                map,
                gain,
                noise_scale,
                m,
            } => {
                let cap = m - noise_scale;
                (0..*k)
                    .map(|j| {
                        let t = gain * x[j % self.d];
                        match map {
                            MeanMap::Zero => 0.0,
                            MeanMap::Clip => t.clamp(-cap, cap),
                            MeanMap::Tanh => cap * t.tanh(),
                        }
                    })
                    .collect()
            }
            LabelLaw::Classification { encoding, .. } => {
                let q = self.class_probs(x);
                match encoding {
                    Encoding::OneHot => q,
                    Encoding::Binary => vec![q[1]],
                }
            }
        }
    }

    /// Support of `Y | X = x` with probabilities, for discrete label laws.
    pub fn label_atoms(&self, x: &[f64]) -> Option<Vec<(f64, Vec<f64>)>> {
        match &self.label_law {
            LabelLaw::Regression { .. } => None,
            LabelLaw::Classification { encoding, .. } => {
                let q = self.class_probs(x);
                let k = q.len();
                Some(
                    q.iter()
                        .enumerate()
                        .map(|(l, &p)| (p, encode(l, k, *encoding)))
                        .collect(),
                )
            }
        }
    }

    /// `E_{Y|X=x}[D(Y, E[Y|X=x])]` in closed form.
    fn inner_noise(&self, loss: &LossSpec, x: &[f64]) -> Result<f64> {
        match &self.label_law {
            LabelLaw::Regression { k, noise_scale, .. } => {
                let var = noise_scale * noise_scale / 3.0;
                Ok(match &loss.kind {
                    LossKind::Mahalanobis { matrix } => {
                        (0..*k).map(|i| matrix[i * k + i]).sum::<f64>() * var
                    }
                    _ => *k as f64 * var,
                })
            }
            LabelLaw::Classification { .. } => {
                let mean = self.conditional_mean(x);
                let mut acc = 0.0;
                for (p, y) in self.label_atoms(x).unwrap_or_default() {
                    if p > 0.0 {
                        acc += p * loss.divergence(&y, &mean)?;
                    }
                }
                Ok(acc)
            }
        }
    }

    /// Noise floor `sigma^2 = E[D(Y, E[Y|X])]`.
    ///
    /// The inner expectation over `Y | X` is always closed form; the outer one
    /// over `X` is Monte Carlo unless the label law ignores `x`.
    pub fn noise_floor(&self, loss: &LossSpec, n_mc: usize, stream: u64) -> Result<NoiseFloor> {
        if n_mc < 1000 {
            return Err(Error::InsufficientSamples {
                needed: 1000,
                got: n_mc,
            });
        }
        self.check_compatible(loss)?;
        if self.label_law.x_free() {
            let x = vec![0.0; self.d];
            return Ok(NoiseFloor {
                sigma2: self.inner_noise(loss, &x)?,
                mc_stderr: 0.0,
                provenance: Provenance::ClosedForm,
            });
        }
        let mut rng = self.rng(stream);
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for i in 0..n_mc {
            let g = self.draw_component(&mut rng);
            let x = self.draw_x(g, &mut rng);
            let v = self.inner_noise(loss, &x)?;
            let delta = v - mean;
            mean += delta / (i + 1) as f64;
            m2 += delta * (v - mean);
        }
        let var = if n_mc > 1 { m2 / (n_mc - 1) as f64 } else { 0.0 };
        Ok(NoiseFloor {
            sigma2: mean,
            mc_stderr: (var / n_mc as f64).sqrt(),
            provenance: Provenance::MonteCarlo {
                samples: n_mc,
                seed: self.seed,
                stream,
            },
        })
    }

    /// Sub-Gaussian parameter of `f(X)` estimated by the MGF grid, next to the
    /// isoperimetric prediction `L sqrt(c/d)` with `c = 1`.
    pub fn isoperimetry_witness(
        &self,
        f: impl Fn(&[f64]) -> f64,
        lipschitz: f64,
        n_mc: usize,
        stream: u64,
    ) -> Result<IsoperimetryWitness> {
        if self.r() > 1 {
            return Err(Error::MixtureNotSupported(self.r()));
        }
        let mut rng = self.rng(stream);
        let values: Vec<f64> = (0..n_mc).map(|_| f(&self.draw_x(0, &mut rng))).collect();
        let estimate = subgaussian_estimate(&values)?;
        Ok(IsoperimetryWitness {
            subgaussian_hat: estimate.sigma_hat,
            bound: lipschitz / (self.d as f64).sqrt(),
            estimate,
        })
    }
}

fn encode(class: usize, classes: usize, encoding: Encoding) -> Vec<f64> {
    match encoding {
        Encoding::OneHot => {
            let mut y = vec![0.0; classes];
            y[class] = 1.0;
            y
        }
        Encoding::Binary => vec![if class == 1 { 1.0 } else { 0.0 }],
    }
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn validate_law(law: &LabelLaw) -> Result<()> {
    match law {
        LabelLaw::Regression {
            k,
            gain,
            noise_scale,
            m,
            ..
        } => {
            if *k == 0 {
                return Err(Error::invalid("label dimension must be positive"));
            }
            if !(*m > 0.0) {
                return Err(Error::domain(None, *m, "label box half-width must be positive"));
            }
            if !(*noise_scale >= 0.0) || *noise_scale > *m {
                return Err(Error::invalid(format!(
                    "noise scale {noise_scale} must lie in [0, M] with M = {m}"
                )));
            }
            if !gain.is_finite() {
                return Err(Error::invalid("mean-map gain must be finite"));
            }
            Ok(())
        }
        LabelLaw::Classification {
            classes,
            probs,
            alpha,
            encoding,
        } => {
            if *classes < 2 {
                return Err(Error::invalid("classification needs at least two classes"));
            }
            if *encoding == Encoding::Binary && *classes != 2 {
                return Err(Error::invalid("binary encoding needs exactly two classes"));
            }
            if !(*alpha > 0.0) || *alpha * *classes as f64 > 1.0 + 1e-15 {
                return Err(Error::domain(None, *alpha, "label floor alpha must lie in (0, 1/K]"));
            }
            if let ProbMap::Constant(q) = probs {
                if q.len() != *classes {
                    return Err(Error::DimensionMismatch {
                        expected: *classes,
                        got: q.len(),
                    });
                }
                for (i, &p) in q.iter().enumerate() {
                    if p < alpha - 1e-15 {
                        return Err(Error::domain(Some(i), p, "class probability below alpha"));
                    }
                }
                let s: f64 = q.iter().sum();
                if (s - 1.0).abs() > 1e-9 {
                    return Err(Error::invalid(format!("class probabilities sum to {s}")));
                }
            }
            Ok(())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    ClosedForm,
    MonteCarlo { samples: usize, seed: u64, stream: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseFloor {
    pub sigma2: f64,
    pub mc_stderr: f64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IsoperimetryWitness {
    pub subgaussian_hat: f64,
    pub bound: f64,
    pub estimate: SubGaussEstimate,
}

/// Component means in config form: `"zero"`, `"spread:R"` or explicit vectors.
#[derive(Debug, Clone, PartialEq)]
pub enum MeansSpec {
    Zero,
    /// `mu_k = R (-1)^{floor(k/d)} e_{k mod d}`
    Spread(f64),
    List(Vec<Vec<f64>>),
}

impl MeansSpec {
    pub fn materialize(&self, d: usize, r: usize) -> Result<Vec<Vec<f64>>> {
        match self {
            MeansSpec::Zero => Ok(vec![vec![0.0; d]; r]),
            MeansSpec::Spread(radius) => Ok((0..r)
                .map(|k| {
                    let mut mu = vec![0.0; d];
                    let sign = if (k / d) % 2 == 0 { 1.0 } else { -1.0 };
                    mu[k % d] = sign * radius;
                    mu
                })
                .collect()),
            MeansSpec::List(v) => {
                if v.len() != r {
                    return Err(Error::invalid(format!(
                        "model.means lists {} vectors for r = {r}",
                        v.len()
                    )));
                }
                Ok(v.clone())
            }
        }
    }
}

impl Serialize for MeansSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            MeansSpec::Zero => s.serialize_str("zero"),
            MeansSpec::Spread(r) => s.serialize_str(&format!("spread:{r}")),
            MeansSpec::List(v) => v.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for MeansSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            List(Vec<Vec<f64>>),
        }
        match Raw::deserialize(d)? {
            Raw::List(v) => Ok(MeansSpec::List(v)),
            Raw::Text(t) if t == "zero" => Ok(MeansSpec::Zero),
            Raw::Text(t) => t
                .strip_prefix("spread:")
                .and_then(|r| r.trim().parse::<f64>().ok())
                .map(MeansSpec::Spread)
                .ok_or_else(|| {
                    serde::de::Error::custom(format!(
                        "model.means must be \"zero\", \"spread:R\" or a list of vectors, got {t:?}"
                    ))
                }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelLawName {
    Regression,
    Classification,
}

fn default_means() -> MeansSpec {
    MeansSpec::Zero
}

fn default_gain() -> f64 {
    1.0
}

/// Text-config form of a data model. The label dimension and box come from
/// the paired loss block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d: usize,
    pub r: usize,
    /// Uniform when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default = "default_means")]
    pub means: MeansSpec,
    pub label_law: LabelLawName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Regression mean map; `tanh` when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_map: Option<MeanMap>,
    #[serde(default = "default_gain")]
    pub gain: f64,
    /// Constant class probabilities; the soft-floor map is used when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
}

impl ModelConfig {
    /// Builds the model for `loss`, falling back to `default_seed` when the
    /// block has no seed of its own.
    pub fn build(&self, loss: &LossSpec, default_seed: u64) -> Result<DataModel> {
        if self.r == 0 {
            return Err(Error::invalid("model.r must be positive"));
        }
        let weights = match &self.weights {
            Some(w) => w.clone(),
            None => vec![1.0 / self.r as f64; self.r],
        };
        if weights.len() != self.r {
            return Err(Error::invalid(format!(
                "model.weights has {} entries for r = {}",
                weights.len(),
                self.r
            )));
        }
        let means = self.means.materialize(self.d, self.r)?;
        let law = match self.label_law {
            LabelLawName::Regression => LabelLaw::Regression {
                k: loss.k,
                map: self.mean_map.unwrap_or(MeanMap::Tanh),
                gain: self.gain,
                noise_scale: self.noise_scale.unwrap_or(0.0),
                m: loss.params.m,
            },
            LabelLawName::Classification => {
                let binary = matches!(loss.kind, LossKind::BinaryEntropy);
                let classes = if binary { 2 } else { loss.k };
                let alpha = self.alpha.unwrap_or(loss.params.alpha);
                LabelLaw::Classification {
                    classes,
                    probs: match &self.probs {
                        Some(q) => ProbMap::Constant(q.clone()),
                        None => ProbMap::SoftFloor {
                            temperature: self.temperature.unwrap_or(1.0),
                        },
                    },
                    alpha,
                    encoding: if binary { Encoding::Binary } else { Encoding::OneHot },
                }
            }
        };
        let model = DataModel::new(self.d, weights, means, law, self.seed.unwrap_or(default_seed))?;
        model.check_compatible(loss)?;
        Ok(model)
    }
}
