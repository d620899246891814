//! Small ReLU networks with a box-shaped parameter domain.
//!
//! A [`FunctionClass`] fixes the widths `[d, h_1, ..., K]`, a per-layer
//! parameter bound, an output head and the input radius over which its
//! constants are certified. Parameters are stored flat, layer by layer, each
//! layer as its row-major weight matrix followed by its bias.

mod cover;
mod lipschitz;
mod train;

pub use cover::{build_grid_net, epsilon_net_size, NetOfFunctions, NetSize, DEFAULT_NET_BUDGET};
pub use lipschitz::{
    lipschitz_lower_bound, lipschitz_upper_bound, parameterization_lipschitz_estimate,
    LipschitzUpper,
};
pub use train::{empirical_loss, train_overfit, TrainOptions, TrainOutcome};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bregman::{sigmoid, LossConstants};
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::sampler::softmax;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "head", rename_all = "snake_case")]
pub enum Head {
    /// Clip every output to `[-m, m]`; the smooth variant uses `m tanh(z/m)`.
    Clip { m: f64, smooth: bool },
    /// Softmax of the pre-head outputs clipped to `[-m, m]`.
    Softmax { m: f64 },
    /// Sigmoid of the single pre-head output clipped to `[-m, m]`.
    Sigmoid { m: f64 },
}

impl Head {
    pub fn m(&self) -> f64 {
        match *self {
            Head::Clip { m, .. } | Head::Softmax { m } | Head::Sigmoid { m } => m,
        }
    }

    /// Lipschitz constant of the head as a map `R^K -> R^K`.
    pub fn lipschitz(&self) -> f64 {
        match self {
            Head::Clip { .. } | Head::Softmax { .. } => 1.0,
            Head::Sigmoid { .. } => 0.25,
        }
    }

    fn apply(&self, z: &[f64]) -> Vec<f64> {
        match *self {
            Head::Clip { m, smooth: false } => z.iter().map(|v| v.clamp(-m, m)).collect(),
            Head::Clip { m, smooth: true } => z.iter().map(|v| m * (v / m).tanh()).collect(),
            Head::Softmax { m } => {
                let c: Vec<f64> = z.iter().map(|v| v.clamp(-m, m)).collect();
                softmax(&c)
            }
            Head::Sigmoid { m } => vec![sigmoid(z[0].clamp(-m, m))],
        }
    }

    /// Pulls `g = dL/d(out)` back to `dL/dz`.
    fn backward(&self, z: &[f64], out: &[f64], g: &[f64]) -> Vec<f64> {
        match *self {
            Head::Clip { m, smooth: false } => z
                .iter()
                .zip(g)
                .map(|(v, gi)| if v.abs() < m { *gi } else { 0.0 })
                .collect(),
            Head::Clip { m, smooth: true } => z
                .iter()
                .zip(g)
                .map(|(v, gi)| {
                    let t = (v / m).tanh();
                    gi * (1.0 - t * t)
                })
                .collect(),
            Head::Softmax { m } => {
                let pg: f64 = out.iter().zip(g).map(|(p, gi)| p * gi).sum();
                z.iter()
                    .zip(out.iter().zip(g))
                    .map(|(v, (p, gi))| if v.abs() < m { p * (gi - pg) } else { 0.0 })
                    .collect()
            }
            Head::Sigmoid { m } => {
                let p = out[0];
                vec![if z[0].abs() < m { g[0] * p * (1.0 - p) } else { 0.0 }]
            }
        }
    }

    /// Jacobian of the head at `z`, row-major `K x K`.
    fn jacobian(&self, z: &[f64], out: &[f64]) -> Vec<f64> {
        let k = z.len();
        let mut j = vec![0.0; k * k];
        for c in 0..k {
            let mut e = vec![0.0; k];
            e[c] = 1.0;
            // rows of J^T e_c = column c of J^T = row c of J
            let col = self.backward(z, out, &e);
            for (r, v) in col.into_iter().enumerate() {
                j[c * k + r] = v;
            }
        }
        j
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionClass {
    arch: Vec<usize>,
    /// Every parameter of layer `l` lies in `[-bounds[l], bounds[l]]`.
    layer_bounds: Vec<f64>,
    head: Head,
    /// Radius of the input ball on which the class constants are certified.
    input_radius: f64,
    #[serde(skip)]
    offsets: Vec<usize>,
}

impl FunctionClass {
    pub fn new(arch: Vec<usize>, layer_bounds: Vec<f64>, head: Head, input_radius: f64) -> Result<Self> {
        if arch.len() < 2 || arch.iter().any(|&w| w == 0) {
            return Err(Error::invalid("class.arch needs at least two positive widths"));
        }
        let layers = arch.len() - 1;
        let layer_bounds = match layer_bounds.len() {
            1 => vec![layer_bounds[0]; layers],
            n if n == layers => layer_bounds,
            n => {
                return Err(Error::invalid(format!(
                    "class.param_box has {n} entries for {layers} layers"
                )))
            }
        };
        if layer_bounds.iter().any(|b| !(*b >= 0.0) || !b.is_finite()) {
            return Err(Error::invalid("parameter bounds must be finite and nonnegative"));
        }
        if !(head.m() > 0.0) {
            return Err(Error::domain(None, head.m(), "head bound M must be positive"));
        }
        if matches!(head, Head::Sigmoid { .. }) && arch[layers] != 1 {
            return Err(Error::invalid("sigmoid head needs a single output"));
        }
        if matches!(head, Head::Softmax { .. }) && arch[layers] < 2 {
            return Err(Error::invalid("softmax head needs at least two outputs"));
        }
        if !(input_radius > 0.0) {
            return Err(Error::invalid("input radius must be positive"));
        }
        let mut offsets = vec![0];
        for l in 0..layers {
            offsets.push(offsets[l] + arch[l + 1] * (arch[l] + 1));
        }
        Ok(FunctionClass {
            arch,
            layer_bounds,
            head,
            input_radius,
            offsets,
        })
    }

    pub fn arch(&self) -> &[usize] {
        &self.arch
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn layer_bounds(&self) -> &[f64] {
        &self.layer_bounds
    }

    pub fn input_radius(&self) -> f64 {
        self.input_radius
    }

    pub fn layers(&self) -> usize {
        self.arch.len() - 1
    }

    pub fn d(&self) -> usize {
        self.arch[0]
    }

    pub fn k(&self) -> usize {
        self.arch[self.layers()]
    }

    /// Total parameter count `p`.
    pub fn p(&self) -> usize {
        self.offsets[self.layers()]
    }

    /// Parameter range `[start, end)` of layer `l`, weights first.
    pub fn layer_range(&self, l: usize) -> (usize, usize) {
        (self.offsets[l], self.offsets[l + 1])
    }

    /// Interval for parameter `i`.
    pub fn param_bounds(&self, i: usize) -> (f64, f64) {
        let l = self.offsets.partition_point(|&o| o <= i) - 1;
        let b = self.layer_bounds[l];
        (-b, b)
    }

    /// Euclidean diameter `W` of the parameter box.
    pub fn diameter(&self) -> f64 {
        (0..self.layers())
            .map(|l| {
                let (a, b) = self.layer_range(l);
                (b - a) as f64 * (2.0 * self.layer_bounds[l]).powi(2)
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn contains(&self, w: &[f64]) -> bool {
        self.check_params(w).is_ok()
    }

    pub fn check_params(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.p() {
            return Err(Error::DimensionMismatch {
                expected: self.p(),
                got: w.len(),
            });
        }
        for l in 0..self.layers() {
            let (a, b) = self.layer_range(l);
            let bound = self.layer_bounds[l];
            for (i, &v) in w[a..b].iter().enumerate() {
                if !(v.abs() <= bound) {
                    return Err(Error::ParamOutOfDomain {
                        index: a + i,
                        value: v,
                        lo: -bound,
                        hi: bound,
                    });
                }
            }
        }
        Ok(())
    }

    /// Clamps `w` into the parameter box in place.
    pub fn project(&self, w: &mut [f64]) {
        for l in 0..self.layers() {
            let (a, b) = self.layer_range(l);
            let bound = self.layer_bounds[l];
            for v in &mut w[a..b] {
                *v = v.clamp(-bound, bound);
            }
        }
    }

    /// Uniform draw from the parameter box.
    pub fn random_params(&self, rng: &mut StreamRng) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.p());
        for l in 0..self.layers() {
            let (a, b) = self.layer_range(l);
            let bound = self.layer_bounds[l];
            for _ in a..b {
                w.push(if bound > 0.0 {
                    rng.random_range(-bound..=bound)
                } else {
                    0.0
                });
            }
        }
        w
    }

    /// He-style initialisation `N(0, 2/fan_in)` for weights, zero biases,
    /// clamped into the box.
    pub fn init_params(&self, rng: &mut StreamRng) -> Vec<f64> {
        let mut w = vec![0.0; self.p()];
        for l in 0..self.layers() {
            let (a, _) = self.layer_range(l);
            let (fan_in, fan_out) = (self.arch[l], self.arch[l + 1]);
            let sd = (2.0 / fan_in as f64).sqrt();
            for v in &mut w[a..a + fan_in * fan_out] {
                let z: f64 = rng.sample(StandardNormal);
                *v = sd * z;
            }
        }
        self.project(&mut w);
        w
    }

    /// Uniform draw from the input ball of radius `input_radius`.
    pub fn random_input(&self, rng: &mut StreamRng) -> Vec<f64> {
        let d = self.d();
        let dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = crate::linalg::norm(&dir).max(1e-300);
        let u: f64 = rng.random();
        let radius = self.input_radius * u.powf(1.0 / d as f64);
        dir.into_iter().map(|v| v * radius / norm).collect()
    }

    /// Checked realization `tau(w)`.
    pub fn realize(&self, w: &[f64]) -> Result<Network<'_>> {
        self.check_params(w)?;
        Ok(Network {
            class: self,
            params: w.to_vec(),
        })
    }

    /// Realization after clamping `w` into the box.
    pub fn realize_projected(&self, w: &[f64]) -> Result<Network<'_>> {
        if w.len() != self.p() {
            return Err(Error::DimensionMismatch {
                expected: self.p(),
                got: w.len(),
            });
        }
        let mut params = w.to_vec();
        self.project(&mut params);
        Ok(Network { class: self, params })
    }

    /// Analytic parameterization constant `J` on the input ball.
    ///
    /// With `S_l = b_l sqrt(in_l out_l)` bounding `||W_l||`, the hidden norms
    /// obey `H_0 = R`, `H_l = S_l H_{l-1} + b_l sqrt(out_l)`. Perturbing layer
    /// `l` moves the output by at most `(prod_{j>l} S_j) sqrt(H_{l-1}^2 + 1)`
    /// times the parameter change, and Cauchy-Schwarz over layers gives
    /// `J = sqrt(sum_l c_l^2)`, scaled by the head's Lipschitz constant.
    pub fn j_cert(&self) -> f64 {
        let layers = self.layers();
        let s: Vec<f64> = (0..layers)
            .map(|l| self.layer_bounds[l] * ((self.arch[l] * self.arch[l + 1]) as f64).sqrt())
            .collect();
        let mut h = vec![self.input_radius];
        for l in 0..layers {
            let next = s[l] * h[l] + self.layer_bounds[l] * (self.arch[l + 1] as f64).sqrt();
            h.push(next);
        }
        let mut total = 0.0;
        for l in 0..layers {
            let downstream: f64 = s[l + 1..].iter().product();
            let c = downstream * (h[l] * h[l] + 1.0).sqrt();
            total += c * c;
        }
        self.head.lipschitz() * total.sqrt()
    }
}

/// A realized network `x -> tau(w)(x)`.
#[derive(Debug, Clone)]
pub struct Network<'a> {
    class: &'a FunctionClass,
    params: Vec<f64>,
}

/// Activations kept for the backward pass.
struct Trace {
    /// Inputs to each layer (post-activation), `layers` entries.
    inputs: Vec<Vec<f64>>,
    /// Pre-head outputs.
    z: Vec<f64>,
    out: Vec<f64>,
}

impl<'a> Network<'a> {
    pub fn class(&self) -> &'a FunctionClass {
        self.class
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Weight matrix (row-major, `out x in`) and bias of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (a, b) = self.class.layer_range(l);
        let split = a + self.class.arch[l] * self.class.arch[l + 1];
        (&self.params[a..split], &self.params[split..b])
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let layers = self.class.layers();
        let mut inputs = Vec::with_capacity(layers);
        let mut h = x.to_vec();
        for l in 0..layers {
            let (w, b) = self.layer(l);
            let (fan_in, fan_out) = (self.class.arch[l], self.class.arch[l + 1]);
            let mut z = b.to_vec();
            for (o, zo) in z.iter_mut().enumerate().take(fan_out) {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                *zo += crate::linalg::dot(row, &h);
            }
            inputs.push(std::mem::take(&mut h));
            if l + 1 < layers {
                for v in &mut z {
                    *v = v.max(0.0);
                }
            }
            h = z;
        }
        let out = self.class.head.apply(&h);
        Trace { inputs, z: h, out }
    }

    /// Pre-head outputs.
    pub fn pre_head(&self, x: &[f64]) -> Vec<f64> {
        self.trace(x).z
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.trace(x).out
    }

    /// Adds `d(out . g)/dw` to `grad`, returns the network output.
    ///
    /// `loss_grad` maps the output to `dL/d(out)`.
    pub(crate) fn accumulate_grad(
        &self,
        x: &[f64],
        grad: &mut [f64],
        loss_grad: impl FnOnce(&[f64]) -> Result<Vec<f64>>,
    ) -> Result<Vec<f64>> {
        let t = self.trace(x);
        let g_out = loss_grad(&t.out)?;
        let mut g = self.class.head.backward(&t.z, &t.out, &g_out);
        for l in (0..self.class.layers()).rev() {
            let (a, _) = self.class.layer_range(l);
            let (fan_in, fan_out) = (self.class.arch[l], self.class.arch[l + 1]);
            let h = &t.inputs[l];
            let (w, _) = self.layer(l);
            let mut g_in = vec![0.0; fan_in];
            for o in 0..fan_out {
                let go = g[o];
                if go == 0.0 {
                    continue;
                }
                let row = a + o * fan_in;
                for (gw, hi) in grad[row..row + fan_in].iter_mut().zip(h) {
                    *gw += go * hi;
                }
                grad[a + fan_in * fan_out + o] += go;
                if l > 0 {
                    for (gi, wi) in g_in.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                        *gi += go * wi;
                    }
                }
            }
            if l > 0 {
                // ReLU gate of the previous layer
                for (gi, hi) in g_in.iter_mut().zip(h) {
                    if *hi <= 0.0 {
                        *gi = 0.0;
                    }
                }
            }
            g = g_in;
        }
        Ok(t.out)
    }

    /// Jacobian of the network (including the head) at `x`, row-major
    /// `K x d`, taken on the linear piece containing `x`.
    pub fn jacobian(&self, x: &[f64]) -> Vec<f64> {
        let t = self.trace(x);
        let layers = self.class.layers();
        // running product, rows = current width, cols = d
        let d = self.class.d();
        let mut jac: Vec<f64> = Vec::new();
        let mut rows = d;
        // jac holds d(layer output)/dx, rows x d
        for l in 0..layers {
            let (w, _) = self.layer(l);
            let (fan_in, fan_out) = (self.class.arch[l], self.class.arch[l + 1]);
            let mut next = vec![0.0; fan_out * d];
            for o in 0..fan_out {
                // ReLU derivative on hidden layers; the last layer is linear
                if l + 1 < layers && t.inputs[l + 1][o] <= 0.0 {
                    continue;
                }
                for i in 0..fan_in {
                    let wv = w[o * fan_in + i];
                    if wv == 0.0 {
                        continue;
                    }
                    if l == 0 {
                        next[o * d + i] += wv;
                    } else {
                        for c in 0..d {
                            next[o * d + c] += wv * jac[i * d + c];
                        }
                    }
                }
            }
            jac = next;
            rows = fan_out;
        }
        let k = rows;
        let hj = self.class.head.jacobian(&t.z, &t.out);
        let mut full = vec![0.0; k * d];
        for r in 0..k {
            for m in 0..k {
                let h = hj[r * k + m];
                if h == 0.0 {
                    continue;
                }
                for c in 0..d {
                    full[r * d + c] += h * jac[m * d + c];
                }
            }
        }
        full
    }

    /// Largest output distance over `points` between this network and `other`.
    pub fn sup_distance(&self, other: &Network<'_>, points: &[Vec<f64>]) -> f64 {
        points
            .iter()
            .map(|x| crate::linalg::dist(&self.eval(x), &other.eval(x)))
            .fold(0.0, f64::max)
    }
}

/// Perturbation bound `nu (d_Omega L_g K + L_phi + gamma)` on
/// `|D(y, f(x)) - D(y, g(x))|` when `sup ||f - g|| <= nu`.
pub fn net_perturbation_bound(constants: &LossConstants, nu: f64) -> f64 {
    nu * constants.perturbation_factor()
}

/// Text-config form of a class block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassConfig {
    /// Hidden widths only, or the full `[d, ..., K]` list.
    pub arch: Vec<usize>,
    /// One bound for every layer, or one per layer.
    pub param_box: ParamBox,
    pub head: HeadName,
    #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_radius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamBox {
    Uniform(f64),
    PerLayer(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadName {
    Clip,
    SmoothClip,
    Softmax,
    Sigmoid,
}

impl ClassConfig {
    /// Builds the class for inputs of dimension `d` and outputs of dimension
    /// `k`. `default_m` is used when the block has no `M`; `default_radius`
    /// when it has no input radius.
    pub fn build(&self, d: usize, k: usize, default_m: f64, default_radius: f64) -> Result<FunctionClass> {
        let arch = if self.arch.first() == Some(&d) && self.arch.last() == Some(&k) && self.arch.len() >= 2 {
            self.arch.clone()
        } else {
            let mut a = vec![d];
            a.extend(&self.arch);
            a.push(k);
            a
        };
        let m = self.m.unwrap_or(default_m);
        let head = match self.head {
            HeadName::Clip => Head::Clip { m, smooth: false },
            HeadName::SmoothClip => Head::Clip { m, smooth: true },
            HeadName::Softmax => Head::Softmax { m },
            HeadName::Sigmoid => Head::Sigmoid { m },
        };
        let bounds = match &self.param_box {
            ParamBox::Uniform(b) => vec![*b],
            ParamBox::PerLayer(v) => v.clone(),
        };
        FunctionClass::new(arch, bounds, head, self.input_radius.unwrap_or(default_radius))
    }
}
