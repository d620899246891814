//! Sample-size condition, Lipschitz lower bound, the regression and
//! classification specializations, and the failure-probability assembly.
//!
//! Every formula is built as a [`trace::Expr`](crate::trace::Expr), so the
//! number a report prints and the substituted formula it shows come from the
//! same tree.

use serde::{Deserialize, Serialize};

use crate::bregman::LossConstants;
use crate::error::{Error, Result};
use crate::trace::{exp, ln, max, num, sqrt, var, Expr, TraceLine};

/// Default absolute constant of the regression sample-size premise: the
/// theorem's first branch with square-loss constants is
/// `300 (26 K M^2)^2 = 202800 K^2 M^4`, which dominates the second branch
/// `32768 K^3 M^4 r`.
pub const C1_REGRESSION: f64 = 202_800.0;

/// Default absolute constant of the classification sample-size premise:
/// with negative-entropy constants the first branch's inner term is at most
/// `14 sqrt(K) max(a0, 1 + |log alpha|)`, and `300 * 14^2 = 58800`.
pub const C1_CLASSIFICATION: f64 = 58_800.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub constants: LossConstants,
    pub n: usize,
    pub d: usize,
    pub p: usize,
    pub r: usize,
    pub eps: f64,
    pub delta: f64,
    /// Isoperimetry constant.
    pub c: f64,
    /// Constant of the bounded-times-sub-Gaussian product fact.
    pub big_c: f64,
    pub j: f64,
    pub w: f64,
    /// Lipschitz constant at which to evaluate the failure probability.
    #[serde(default)]
    pub lipschitz: Option<f64>,
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::invalid(format!("{name} = {v} must lie in (0, 1)")));
    }
    Ok(())
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::invalid(format!("{name} = {v} must be positive")));
    }
    Ok(())
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        check_unit("eps", self.eps)?;
        check_unit("delta", self.delta)?;
        for (name, v) in [("n", self.n), ("d", self.d), ("p", self.p), ("r", self.r), ("K", self.constants.k)] {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be at least 1")));
            }
        }
        check_positive("c", self.c)?;
        check_positive("C", self.big_c)?;
        check_positive("J", self.j)?;
        check_positive("W", self.w)?;
        if let Some(l) = self.lipschitz {
            check_positive("L", l)?;
        }
        Ok(())
    }

    fn k(&self) -> Expr {
        var("K", self.constants.k as f64)
    }
}

/// Value of a formula with its trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluated {
    pub value: f64,
    pub trace: Vec<TraceLine>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSize {
    /// Larger branch before rounding up.
    pub value: f64,
    pub branch_concentration: f64,
    pub branch_mixture: f64,
    /// `ceil(value)`, saturating at `u64::MAX`.
    pub n_required: u64,
    pub trace: Vec<TraceLine>,
}

fn ceil_count(v: f64) -> u64 {
    if v >= u64::MAX as f64 {
        u64::MAX
    } else {
        v.ceil().max(0.0) as u64
    }
}

/// Theorem-level sample-size condition: the larger of
/// `300 log(10K/delta) (m1 + m2 + 2 max(3 gamma, m3)(m0 + a0))^2 / eps^2` and
/// `2048 K^2 gamma^2 r d_Omega^2 log(10 K r/delta) / eps^2`.
pub fn sample_size_requirement(inp: &BoundInputs) -> Result<SampleSize> {
    inp.validate()?;
    let c = &inp.constants;
    let eps = var("eps", inp.eps);
    let delta = var("delta", inp.delta);
    let r = var("r", inp.r as f64);
    let gamma = var("gamma", c.gamma);
    let inner = var("m1", c.m1)
        + var("m2", c.m2)
        + 2.0 * max(3.0 * gamma.clone(), var("m3", c.m3)) * (var("m0", c.m0) + var("a0", c.a0));
    let first = 300.0 * ln(10.0 * inp.k() / delta.clone()) / eps.clone().pow(num(2.0)) * inner.pow(num(2.0));
    let second = 2048.0
        * inp.k().pow(num(2.0))
        * gamma.pow(num(2.0))
        * r.clone()
        * var("d_Omega", c.d_omega).pow(num(2.0))
        * ln(10.0 * inp.k() * r / delta)
        / eps.pow(num(2.0));
    let (b1, b2) = (first.eval(), second.eval());
    let value = b1.max(b2);
    Ok(SampleSize {
        value,
        branch_concentration: b1,
        branch_mixture: b2,
        n_required: ceil_count(value),
        trace: vec![
            TraceLine::new("n_branch_concentration", &first),
            TraceLine::new("n_branch_mixture", &second),
        ],
    })
}

/// Applicability flag plus value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBound {
    pub value: f64,
    /// `n` meets the sample-size premise; the value is returned either way.
    pub applicable: bool,
    pub n_required: u64,
    pub trace: Vec<TraceLine>,
}

/// `(prefix, log argument)` of the shared shape
/// `eps / prefix * sqrt(n d / (p log(1 + arg/eps) + log(5K/delta)))`.
fn robustness_shape(
    prefix: Expr,
    log_arg: Expr,
    eps: f64,
    n: usize,
    d: usize,
    p: usize,
    k: usize,
    delta: f64,
) -> Expr {
    let eps = var("eps", eps);
    let denom = var("p", p as f64) * ln(1.0 + log_arg / eps.clone())
        + ln(5.0 * var("K", k as f64) / var("delta", delta));
    eps / prefix * sqrt(var("n", n as f64) * var("d", d as f64) / denom)
}

fn theorem_expr(inp: &BoundInputs) -> Expr {
    let c = &inp.constants;
    let prefix = 32.0
        * var("C", inp.big_c)
        * inp.k()
        * var("d_Omega", c.d_omega)
        * var("L_g", c.l_g)
        * sqrt(2.0 * var("c", inp.c));
    let log_arg = 8.0 * var("J", inp.j) * var("W", inp.w) * perturbation_expr(c);
    robustness_shape(prefix, log_arg, inp.eps, inp.n, inp.d, inp.p, c.k, inp.delta)
}

fn perturbation_expr(c: &LossConstants) -> Expr {
    var("d_Omega", c.d_omega) * var("L_g", c.l_g) * var("K", c.k as f64) + var("L_phi", c.l_phi) + var("gamma", c.gamma)
}

/// The theorem's lower bound on the Lipschitz constant of any `eps`-overfitting
/// class member:
/// `eps / (32 C K d_Omega L_g sqrt(2c)) * sqrt(n d / (p log(1 + 8 J W (d_Omega L_g K + L_phi + gamma)/eps) + log(5K/delta)))`.
pub fn robustness_lower_bound(inp: &BoundInputs) -> Result<LowerBound> {
    let req = sample_size_requirement(inp)?;
    let e = theorem_expr(inp);
    let mut trace = req.trace;
    trace.push(TraceLine::new("L_floor", &e));
    Ok(LowerBound {
        value: e.eval(),
        applicable: inp.n as u64 >= req.n_required,
        n_required: req.n_required,
        trace,
    })
}

/// Inputs of the two specializations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorollaryInputs {
    pub k: usize,
    /// Box half-width (regression) or logit bound (classification).
    pub m: f64,
    /// Label floor; classification only.
    #[serde(default)]
    pub alpha: f64,
    pub j: f64,
    pub w: f64,
    pub n: usize,
    pub d: usize,
    pub p: usize,
    pub r: usize,
    pub eps: f64,
    pub delta: f64,
    pub c: f64,
    pub big_c: f64,
    /// Absolute constant of the sample-size premise.
    pub c1: f64,
}

impl CorollaryInputs {
    fn validate(&self) -> Result<()> {
        check_unit("eps", self.eps)?;
        check_unit("delta", self.delta)?;
        for (name, v) in [("n", self.n), ("d", self.d), ("p", self.p), ("r", self.r), ("K", self.k)] {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be at least 1")));
            }
        }
        for (name, v) in [("M", self.m), ("c", self.c), ("C", self.big_c), ("J", self.j), ("W", self.w), ("C1", self.c1)] {
            check_positive(name, v)?;
        }
        Ok(())
    }
}

/// Regression specialization:
/// `eps / (128 C K M sqrt(2c)) * sqrt(n d / (p log(1 + 64 J W K M/eps) + log(5K/delta)))`,
/// applicable when `n >= C1 M^4 K^3 r log(10 K r/delta) / eps^2`.
pub fn regression_bound(inp: &CorollaryInputs) -> Result<LowerBound> {
    inp.validate()?;
    let k = var("K", inp.k as f64);
    let m = var("M", inp.m);
    let prefix = 128.0 * var("C", inp.big_c) * k.clone() * m.clone() * sqrt(2.0 * var("c", inp.c));
    let log_arg = 64.0 * var("J", inp.j) * var("W", inp.w) * k.clone() * m.clone();
    let e = robustness_shape(prefix, log_arg, inp.eps, inp.n, inp.d, inp.p, inp.k, inp.delta);
    let req = var("C1", inp.c1)
        * m.pow(num(4.0))
        * k.clone().pow(num(3.0))
        * var("r", inp.r as f64)
        * ln(10.0 * k * var("r", inp.r as f64) / var("delta", inp.delta))
        / var("eps", inp.eps).pow(num(2.0));
    let n_required = ceil_count(req.eval());
    Ok(LowerBound {
        value: e.eval(),
        applicable: inp.n as u64 >= n_required,
        n_required,
        trace: vec![TraceLine::new("n_required", &req), TraceLine::new("L_floor", &e)],
    })
}

fn classification_prefix(k: usize, m: f64, c: f64, big_c: f64, improved: bool) -> Expr {
    let k = var("K", k as f64);
    if improved {
        64.0 * var("C", big_c) * k * sqrt(2.0 * var("c", c))
    } else {
        32.0 * var("C", big_c) * k.pow(num(2.0)) * exp(2.0 * var("M", m)) * sqrt(2.0 * var("c", c))
    }
}

/// Denominator of the `eps / (...)` prefactor of the classification bound.
pub fn classification_prefactor_denominator(k: usize, m: f64, c: f64, big_c: f64, improved: bool) -> f64 {
    classification_prefix(k, m, c, big_c, improved).eval()
}

/// Classification specialization. The generic form has prefix
/// `32 C K^2 e^{2M} sqrt(2c)` and `2 sqrt(K)(1 + 2M + log K)` inside the log;
/// the improved form, which bounds the pre-softmax Lipschitz constant, has
/// prefix `64 C K sqrt(2c)` and `sqrt(K)(1 + 2M + log K)`. Both are
/// applicable when `n >= C1 K^3 r log(10 K r/delta) max(a0, 1 + |log alpha|)^2 / eps^2`
/// with `a0 = 1 + 2M + log K`.
pub fn classification_bound(inp: &CorollaryInputs, improved: bool) -> Result<LowerBound> {
    inp.validate()?;
    if !(inp.alpha > 0.0 && inp.alpha <= 1.0 / inp.k as f64) {
        return Err(Error::invalid(format!("alpha = {} must lie in (0, 1/K]", inp.alpha)));
    }
    let k = var("K", inp.k as f64);
    let m = var("M", inp.m);
    let two_m = exp(2.0 * m.clone());
    let a0 = 1.0 + 2.0 * m.clone() + ln(k.clone());
    let entropy_term = sqrt(k.clone()) * a0.clone();
    let prefix = classification_prefix(inp.k, inp.m, inp.c, inp.big_c, improved);
    let entropy_term = if improved { entropy_term } else { 2.0 * entropy_term };
    let log_arg = 8.0 * var("J", inp.j) * var("W", inp.w) * (two_m * k.clone().pow(num(2.0)) + entropy_term);
    let e = robustness_shape(prefix, log_arg, inp.eps, inp.n, inp.d, inp.p, inp.k, inp.delta);
    let floor_term = 1.0 + var("abs_log_alpha", inp.alpha.ln().abs());
    let req = var("C1", inp.c1)
        * k.clone().pow(num(3.0))
        * var("r", inp.r as f64)
        * ln(10.0 * k * var("r", inp.r as f64) / var("delta", inp.delta))
        / var("eps", inp.eps).pow(num(2.0))
        * max(a0, floor_term).pow(num(2.0));
    let n_required = ceil_count(req.eval());
    Ok(LowerBound {
        value: e.eval(),
        applicable: inp.n as u64 >= n_required,
        n_required,
        trace: vec![TraceLine::new("n_required", &req), TraceLine::new("L_floor", &e)],
    })
}

/// One additive term of the failure probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureTerm {
    pub name: String,
    /// Natural log of the term.
    pub log_value: f64,
    /// Uncapped value (saturates at `f64::MAX`).
    pub value: f64,
    pub capped: f64,
}

impl FailureTerm {
    fn new(name: &str, log_value: f64) -> Self {
        let value = if log_value >= f64::MAX.ln() {
            f64::MAX
        } else {
            log_value.exp()
        };
        FailureTerm {
            name: name.to_string(),
            log_value,
            value,
            capped: value.min(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub n: usize,
    pub n_required: u64,
    pub n_ok: bool,
    pub l_floor: f64,
    /// Lipschitz constant the failure terms were evaluated at.
    pub lipschitz: f64,
    /// Net radius `nu = eps / (2 (d_Omega L_g K + L_phi + gamma))`.
    pub nu: f64,
    /// `p log(1 + 4 W J / nu)`, the log of the net-size bound.
    pub log_net_size: f64,
    pub terms: Vec<FailureTerm>,
    /// Sum of the uncapped terms (saturating).
    pub delta_total: f64,
    pub delta_total_capped: f64,
    /// `delta_total >= 1`.
    pub vacuous: bool,
    pub trace: Vec<TraceLine>,
}

/// Failure probability of the whole argument at Lipschitz level `L`.
///
/// For `r = 1` the four terms are the net term
/// `K |F| exp(-n d (eps/8)^2 / (2 c C^2 K^2 d_Omega^2 L^2 L_g^2))` and
/// `2K exp(-2 n (eps/8)^2 / M_j^2)` for `j = 0, 1, 2`. For `r > 1` the net
/// term uses `eps/16` and a fifth term
/// `2 K r exp(-n (eps/16)^2 / (8 K^2 gamma^2 r d_Omega^2))` is added.
pub fn failure_probability(inp: &BoundInputs) -> Result<BoundReport> {
    inp.validate()?;
    let l = inp
        .lipschitz
        .ok_or_else(|| Error::invalid("failure probability needs a Lipschitz constant"))?;
    let floor = robustness_lower_bound(inp)?;
    let c = &inp.constants;
    let k = inp.k();
    let eps = var("eps", inp.eps);
    let nu = eps.clone() / (2.0 * perturbation_expr(c));
    let log_net = var("p", inp.p as f64) * ln(1.0 + 4.0 * var("W", inp.w) * var("J", inp.j) / nu.clone());
    let split = if inp.r > 1 { 16.0 } else { 8.0 };
    let net_exponent = var("n", inp.n as f64) * var("d", inp.d as f64) * (eps.clone() / split).pow(num(2.0))
        / (2.0
            * var("c", inp.c)
            * var("C", inp.big_c).pow(num(2.0))
            * k.clone().pow(num(2.0))
            * var("d_Omega", c.d_omega).pow(num(2.0))
            * var("L", l).pow(num(2.0))
            * var("L_g", c.l_g).pow(num(2.0)));
    let log_net_term = ln(k.clone()) + log_net.clone() - net_exponent;
    let mut exprs = vec![("net", log_net_term)];
    for (name, mj) in [("phi2", c.big_m0), ("gamma1", c.big_m1), ("gamma2", c.big_m2)] {
        let e = ln(2.0 * k.clone())
            - 2.0 * var("n", inp.n as f64) * (eps.clone() / 8.0).pow(num(2.0)) / var(&format!("M_{name}"), mj).pow(num(2.0));
        exprs.push((name, e));
    }
    if inp.r > 1 {
        let r = var("r", inp.r as f64);
        let e = ln(2.0 * k.clone() * r.clone())
            - var("n", inp.n as f64) * (eps / 16.0).pow(num(2.0))
                / (8.0
                    * k.pow(num(2.0))
                    * var("gamma", c.gamma).pow(num(2.0))
                    * r
                    * var("d_Omega", c.d_omega).pow(num(2.0)));
        exprs.push(("vtilde", e));
    }
    let mut trace = floor.trace.clone();
    trace.push(TraceLine::new("nu", &nu));
    trace.push(TraceLine::new("log_net_size", &log_net));
    let mut terms = Vec::new();
    for (name, e) in &exprs {
        trace.push(TraceLine::new(&format!("log_term_{name}"), e));
        terms.push(FailureTerm::new(name, e.eval()));
    }
    let delta_total = terms.iter().map(|t| t.value).fold(0.0, |a: f64, b| (a + b).min(f64::MAX));
    Ok(BoundReport {
        n: inp.n,
        n_required: floor.n_required,
        n_ok: floor.applicable,
        l_floor: floor.value,
        lipschitz: l,
        nu: nu.eval(),
        log_net_size: log_net.eval(),
        terms,
        delta_total,
        delta_total_capped: delta_total.min(1.0),
        vacuous: delta_total >= 1.0,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bregman::LossSpec;

    fn square_inputs(k: usize, m: f64) -> BoundInputs {
        BoundInputs {
            constants: LossSpec::square(k, m).unwrap().constants().unwrap(),
            n: 10_000,
            d: 100,
            p: 1000,
            r: 1,
            eps: 0.5,
            delta: 0.1,
            c: 1.0,
            big_c: 2.0,
            j: 1.0,
            w: 1.0,
            lipschitz: None,
        }
    }

    fn corollary(k: usize, m: f64) -> CorollaryInputs {
        CorollaryInputs {
            k,
            m,
            alpha: 0.1,
            j: 1.0,
            w: 1.0,
            n: 10_000,
            d: 100,
            p: 1000,
            r: 1,
            eps: 0.5,
            delta: 0.1,
            c: 1.0,
            big_c: 2.0,
            c1: C1_REGRESSION,
        }
    }

    #[test]
    fn eps_scaling_of_requirement() {
        let mut a = square_inputs(3, 2.0);
        let r1 = sample_size_requirement(&a).unwrap();
        a.eps = 0.25;
        let r2 = sample_size_requirement(&a).unwrap();
        assert!((r2.value / r1.value - 4.0).abs() < 1e-12);
    }

    #[test]
    fn requirement_for_square_k3_m2() {
        let a = BoundInputs {
            r: 1,
            ..square_inputs(3, 2.0)
        };
        // inner = 2 K M^2 + 2 * 3 * 2 sqrt(K) M * 2 sqrt(K) M = 26 K M^2 = 312
        let want = 300.0 * (30.0f64 / 0.1).ln() / 0.25 * 312.0 * 312.0;
        let got = sample_size_requirement(&a).unwrap();
        assert!((got.branch_concentration - want).abs() <= 1e-12 * want);
        assert_eq!(got.n_required, want.ceil() as u64);
    }

    #[test]
    fn sqrt_n_scaling() {
        let mut a = square_inputs(1, 1.0);
        let l1 = robustness_lower_bound(&a).unwrap().value;
        a.n *= 4;
        let l2 = robustness_lower_bound(&a).unwrap().value;
        assert!((l2 / l1 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn regression_matches_theorem_at_k1() {
        let a = square_inputs(1, 1.0);
        let t = robustness_lower_bound(&a).unwrap().value;
        let r = regression_bound(&corollary(1, 1.0)).unwrap().value;
        assert!((t - r).abs() <= 1e-12 * t, "{t} vs {r}");
        // K > 1: the corollary replaces sqrt(K) by K in the log, so it is weaker
        let a = square_inputs(3, 1.0);
        let t = robustness_lower_bound(&a).unwrap().value;
        let r = regression_bound(&corollary(3, 1.0)).unwrap().value;
        assert!(r < t);
    }

    #[test]
    fn generic_classification_matches_theorem() {
        let loss = LossSpec::neg_entropy(2, 1.0, 0.1).unwrap();
        let a = BoundInputs {
            constants: loss.constants().unwrap(),
            ..square_inputs(2, 1.0)
        };
        let t = robustness_lower_bound(&a).unwrap().value;
        let mut ci = corollary(2, 1.0);
        ci.c1 = C1_CLASSIFICATION;
        let g = classification_bound(&ci, false).unwrap().value;
        assert!((t - g).abs() <= 1e-12 * t, "{t} vs {g}");
    }

    #[test]
    fn improved_prefactor_ratio() {
        let mut ci = corollary(2, 1.0);
        ci.c1 = C1_CLASSIFICATION;
        for (k, m) in [(2usize, 1.0), (5, 0.3), (10, 2.0)] {
            let generic = classification_prefactor_denominator(k, m, 1.0, 2.0, false);
            let improved = classification_prefactor_denominator(k, m, 1.0, 2.0, true);
            let want = k as f64 * (2.0 * m).exp() / 2.0;
            assert!((generic / improved - want).abs() <= 1e-12 * want);
        }
        let g = classification_bound(&ci, false).unwrap();
        let i = classification_bound(&ci, true).unwrap();
        assert!(i.value > g.value);
    }

    #[test]
    fn self_consistency_at_requirement() {
        for r in [1usize, 3] {
            let mut a = square_inputs(1, 1.0);
            a.r = r;
            a.n = sample_size_requirement(&a).unwrap().n_required as usize;
            a.lipschitz = Some(robustness_lower_bound(&a).unwrap().value);
            let rep = failure_probability(&a).unwrap();
            assert!(rep.n_ok);
            assert!(rep.delta_total <= a.delta, "{rep:?}");
            assert_eq!(rep.terms.len(), if r == 1 { 4 } else { 5 });
        }
    }

    #[test]
    fn huge_lipschitz_is_vacuous() {
        let mut a = square_inputs(1, 1.0);
        a.lipschitz = Some(1e12);
        let rep = failure_probability(&a).unwrap();
        assert!(rep.vacuous);
        assert_eq!(rep.terms[0].capped, 1.0);
    }

    #[test]
    fn traces_reevaluate() {
        let mut a = square_inputs(2, 1.0);
        a.r = 3;
        a.lipschitz = Some(3.0);
        let rep = failure_probability(&a).unwrap();
        for line in &rep.trace {
            let v = line.reevaluate().unwrap();
            assert!((v - line.value).abs() <= 1e-12 * line.value.abs().max(1e-300), "{line:?}");
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut a = square_inputs(1, 1.0);
        a.eps = 1.5;
        assert!(robustness_lower_bound(&a).is_err());
        let mut ci = corollary(2, 1.0);
        ci.alpha = 0.9;
        assert!(classification_bound(&ci, true).is_err());
    }
}
