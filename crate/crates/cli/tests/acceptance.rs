//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! The process exits 0 so that a criterion that cannot hold as stated is
//! reported rather than hidden behind a test-runner failure. Set
//! `LAWROB_ACCEPTANCE_STRICT=1` to exit 1 when any criterion fails.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use lawrob_cli::bound::compute_bound;
use lawrob_cli::concentration::{run_concentration, statement_ids};
use lawrob_cli::experiment::{run_experiment, Verdict};
use lawrob_cli::identities::{run_identity_suites, IdentityReport, SuiteSizes};
use lawrob_cli::output::{encode_params, strip_timing};
use lawrob_cli::ExperimentConfig;
use lawrob_core::bounds::{classification_prefactor_denominator, regression_bound, robustness_lower_bound};
use lawrob_core::rng::{self, stream_id, tags};
use lawrob_core::{loss_constants, BoundInputs, CorollaryInputs, LossSpec};
use rand::Rng;
use serde::Serialize;

const RERUN_JOBS: usize = 3;

struct Line {
    id: u32,
    pass: bool,
    detail: String,
}

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&configs().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn in_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(jobs).build().unwrap().install(f)
}

fn canon<T: Serialize>(v: &T) -> String {
    serde_json::to_string(&strip_timing(&serde_json::to_value(v).unwrap())).unwrap()
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn suites<'a>(rep: &'a IdentityReport, name: &str) -> Vec<&'a lawrob_cli::identities::SuiteResult> {
    rep.results.iter().filter(|r| r.suite == name).collect()
}

fn identities(lines: &mut Vec<Line>, det: &mut Vec<String>) {
    let cfg = load("identities.toml");
    let sizes = SuiteSizes::from_run(&cfg.run);
    let t = Instant::now();
    let rep = run_identity_suites(cfg.run.seed, &sizes, false).unwrap();
    let elapsed = t.elapsed();
    let rerun = in_pool(RERUN_JOBS, || run_identity_suites(cfg.run.seed, &sizes, false).unwrap());
    if canon(&rep) != canon(&rerun) {
        det.push("identity suites".into());
    }

    let dec = suites(&rep, "decomposition");
    let draws: usize = dec.iter().map(|r| r.cases).sum();
    let worst = dec.iter().map(|r| r.worst).fold(0.0, f64::max);
    lines.push(Line {
        id: 1,
        pass: dec.len() == 4 && draws >= 100_000 && worst <= 1e-9 && dec.iter().all(|r| r.pass) && elapsed.as_secs() <= 60,
        detail: format!("{draws} draws over {} losses, max relative residual {worst:.3e} (tol 1e-9), all suites {}", dec.len(), secs(elapsed)),
    });

    let tri = suites(&rep, "triangle");
    let fd = suites(&rep, "gradient_fd");
    let tri_worst = tri.iter().map(|r| r.worst).fold(0.0, f64::max);
    let fd_worst = fd.iter().map(|r| r.worst).fold(0.0, f64::max);
    let sized = tri.iter().all(|r| r.cases >= 10_000) && fd.iter().all(|r| r.cases >= 1000);
    lines.push(Line {
        id: 2,
        pass: tri.len() == 4 && fd.len() == 4 && sized && tri_worst <= 1e-9 && fd_worst <= 1e-6 && elapsed.as_secs() <= 60,
        detail: format!(
            "triangle max residual {tri_worst:.3e} (tol 1e-9, >= 10^4 cases per loss), gradient FD max rel. error {fd_worst:.3e} (tol 1e-6, >= 10^3 cases per loss)"
        ),
    });

    let opt = suites(&rep, "optimality");
    let opt_worst = opt.iter().map(|r| r.worst).fold(0.0, f64::max);
    lines.push(Line {
        id: 3,
        pass: opt.len() == 4 && opt.iter().all(|r| r.pass) && sizes.grid_step <= 0.01 && elapsed.as_secs() <= 120,
        detail: format!(
            "{} discrete models per loss, grid step {}, worst normalized undercut {opt_worst:.3e} (tol {:e})",
            opt.first().map_or(0, |r| r.cases),
            sizes.grid_step,
            opt.first().map_or(0.0, |r| r.tolerance)
        ),
    });
}

fn concentration(lines: &mut Vec<Line>, det: &mut Vec<String>) {
    let t = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, want) in [
        ("concentration_r1.toml", &["Obs33", "Obs34", "Obs35", "Lem36"][..]),
        ("concentration_r3.toml", &["Lem51_vhat", "Lem52_vtilde"][..]),
    ] {
        let cfg = load(name);
        let ids = statement_ids(&cfg, &[]).unwrap();
        let rep = run_concentration(&cfg, &ids).unwrap();
        let rerun = in_pool(RERUN_JOBS, || run_concentration(&cfg, &ids).unwrap());
        if canon(&rep) != canon(&rerun) {
            det.push(format!("concentration {name}"));
        }
        let names: Vec<&str> = ids.iter().map(|i| i.name()).collect();
        let sized = cfg.run.trials >= 10_000 && cfg.run.n == 200 && cfg.run.eps_multipliers == [0.1, 0.2, 0.4];
        let ok = names == want && sized && rep.errors.is_empty() && rep.reports.iter().all(|r| r.pass);
        pass &= ok;
        let vacuous = rep.reports.iter().filter(|r| r.vacuous).count();
        let margin = rep
            .reports
            .iter()
            .map(|r| r.empirical_freq - (r.analytic_bound + 3.0 * r.mc_stderr))
            .fold(f64::NEG_INFINITY, f64::max);
        parts.push(format!(
            "r={} {} reports ({vacuous} vacuous), max freq - (bound + 3 SE) = {margin:.3e}",
            rep.reports.first().map_or(0, |_| cfg.model.as_ref().map_or(0, |m| m.r)),
            rep.reports.len()
        ));
    }
    let elapsed = t.elapsed();
    lines.push(Line {
        id: 4,
        pass: pass && elapsed.as_secs() <= 15 * 60,
        detail: format!("{}; {} including reruns", parts.join("; "), secs(elapsed)),
    });
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

fn constants(lines: &mut Vec<Line>, det: &mut Vec<String>) {
    let sq = loss_constants(&LossSpec::square(3, 2.0).unwrap()).unwrap();
    let r3 = 3f64.sqrt();
    let sq_ok = [
        (sq.d_omega, 4.0),
        (sq.l_g, 2.0),
        (sq.m1, 12.0),
        (sq.l_phi, 4.0 * r3),
        (sq.gamma, 4.0 * r3),
        (sq.m0, 2.0 * r3),
    ]
    .iter()
    .all(|&(a, b)| close(a, b, 1e-12));

    // written out for K = 2, M = 1, alpha = 0.1
    let ce = loss_constants(&LossSpec::neg_entropy(2, 1.0, 0.1).unwrap()).unwrap();
    let r2 = 2f64.sqrt();
    let ln2 = 2f64.ln();
    let lphi = r2 * (3.0 + ln2);
    let m3 = r2 * (1.0 + 10f64.ln());
    let want = [
        ("d_Omega", ce.d_omega, 1.0),
        ("L_phi", ce.l_phi, lphi),
        ("gamma", ce.gamma, lphi),
        ("L_g", ce.l_g, 2.0 * 1f64.exp().powi(2)),
        ("m0", ce.m0, 1.0),
        ("a0", ce.a0, 1.0),
        ("m1", ce.m1, ln2),
        ("m2", ce.m2, ln2),
        ("m3", ce.m3, m3),
        ("M0", ce.big_m0, 2.0 * ln2 + 2.0 * m3),
        ("M1", ce.big_m1, 4.0 * m3),
        ("M2", ce.big_m2, 12.0 * lphi),
    ];
    let bad: Vec<&str> = want.iter().filter(|(_, a, b)| !close(*a, *b, 1e-12)).map(|w| w.0).collect();
    let again = in_pool(RERUN_JOBS, || loss_constants(&LossSpec::neg_entropy(2, 1.0, 0.1).unwrap()).unwrap());
    if canon(&ce) != canon(&again) {
        det.push("constants".into());
    }
    lines.push(Line {
        id: 5,
        pass: sq_ok && bad.is_empty(),
        detail: format!(
            "square K=3 M=2 {}; classification K=2 M=1 alpha=0.1 {}",
            if sq_ok { "exact to 1e-12" } else { "MISMATCH" },
            if bad.is_empty() { "matches all 12 expressions".to_string() } else { format!("mismatch in {bad:?}") }
        ),
    });
}

fn random_corollary(rng: &mut impl Rng) -> CorollaryInputs {
    fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
        rng.random_range(lo.ln()..hi.ln()).exp()
    }
    CorollaryInputs {
        k: rng.random_range(1..=4),
        m: rng.random_range(0.5..3.0),
        alpha: 0.0,
        j: log_uniform(rng, 1.0, 1e3),
        w: log_uniform(rng, 1.0, 1e3),
        n: log_uniform(rng, 10.0, 1e9) as usize,
        d: log_uniform(rng, 1.0, 1e4) as usize,
        p: log_uniform(rng, 1.0, 1e6) as usize,
        r: rng.random_range(1..=4),
        eps: rng.random_range(0.01..0.99),
        delta: rng.random_range(0.01..0.99),
        c: rng.random_range(0.5..4.0),
        big_c: rng.random_range(1.0..4.0),
        c1: 1.0,
    }
}

fn cross_path(ci: &CorollaryInputs) -> (f64, f64) {
    let cor = regression_bound(ci).unwrap().value;
    let inp = BoundInputs {
        constants: loss_constants(&LossSpec::square(ci.k, ci.m).unwrap()).unwrap(),
        n: ci.n,
        d: ci.d,
        p: ci.p,
        r: ci.r,
        eps: ci.eps,
        delta: ci.delta,
        c: ci.c,
        big_c: ci.big_c,
        j: ci.j,
        w: ci.w,
        lipschitz: None,
    };
    (cor, robustness_lower_bound(&inp).unwrap().value)
}

fn formulas(lines: &mut Vec<Line>, det: &mut Vec<String>) {
    let mut rng = rng::stream(2024, stream_id(tags::SUITE, 6));
    let cases: Vec<CorollaryInputs> = (0..1000).map(|_| random_corollary(&mut rng)).collect();
    let rel = |(a, b): (f64, f64)| (a - b).abs() / b.abs();
    let (mut k1, mut k1_worst, mut kn, mut kn_worst, mut kn_below) = (0, 0.0f64, 0, 0.0f64, true);
    let mut values = Vec::new();
    for ci in &cases {
        let pair = cross_path(ci);
        values.push(pair);
        if ci.k == 1 {
            k1 += 1;
            k1_worst = k1_worst.max(rel(pair));
        } else {
            kn += 1;
            kn_worst = kn_worst.max(rel(pair));
            kn_below &= pair.0 <= pair.1;
        }
    }
    let again: Vec<(f64, f64)> = in_pool(RERUN_JOBS, || cases.iter().map(cross_path).collect());
    if values.iter().zip(&again).any(|(a, b)| a.0.to_bits() != b.0.to_bits() || a.1.to_bits() != b.1.to_bits()) {
        det.push("cross-path".into());
    }

    let mut ratio_worst = 0.0f64;
    for _ in 0..1000 {
        let k = rng.random_range(1..=10usize);
        let m = rng.random_range(0.1..4.0);
        let c = rng.random_range(0.5..4.0);
        let big_c = rng.random_range(1.0..4.0);
        let generic = classification_prefactor_denominator(k, m, c, big_c, false);
        let improved = classification_prefactor_denominator(k, m, c, big_c, true);
        let want = k as f64 * (2.0 * m).exp() / 2.0;
        ratio_worst = ratio_worst.max((generic / improved - want).abs() / want);
    }
    let cross_ok = k1_worst <= 1e-12 && kn_worst <= 1e-12;
    let ratio_ok = ratio_worst <= 4.0 * f64::EPSILON;
    lines.push(Line {
        id: 6,
        pass: cross_ok && ratio_ok,
        detail: format!(
            "cross-path over 1000 random inputs: K=1 {k1} cases max rel. diff {k1_worst:.2e}; K>1 {kn} cases max rel. diff {kn_worst:.2e} \
             (corollary floor {} the theorem floor: its log argument uses 8KM where the square-loss constants give 4KM + 4M sqrt(K)); \
             prefactor ratio vs K e^(2M)/2 max rel. diff {ratio_worst:.2e}",
            if kn_below { "never exceeds" } else { "sometimes exceeds" }
        ),
    });
}

fn self_consistency(lines: &mut Vec<Line>, det: &mut Vec<String>) {
    let mut parts = Vec::new();
    let mut pass = true;
    for name in ["bound_r1.toml", "bound_r3.toml"] {
        let cfg = load(name);
        let out = compute_bound(&cfg).unwrap();
        let again = in_pool(RERUN_JOBS, || compute_bound(&cfg).unwrap());
        if canon(&out) != canon(&again) {
            det.push(format!("bound {name}"));
        }
        let sc = &out.self_consistency;
        pass &= sc.pass && sc.delta_total <= sc.delta;
        parts.push(format!(
            "r={}: n={} L={:.3e} delta_total={:.3e} <= delta={}",
            out.inputs.r, sc.n, sc.l_floor, sc.delta_total, sc.delta
        ));
    }
    lines.push(Line {
        id: 7,
        pass,
        detail: parts.join("; "),
    });
}

fn experiments(lines: &mut Vec<Line>, det: &mut Vec<String>) {
    let base = load("experiment_regression.toml");
    let t = Instant::now();
    let mut pass = true;
    let mut min_ratio = f64::INFINITY;
    let mut n_ok_any = false;
    let mut runs = Vec::new();
    for seed in 1..=10u64 {
        let mut cfg = base.clone();
        cfg.run.seed = seed;
        let run = run_experiment(&cfg).unwrap();
        let r = &run.report;
        let floor = r.l_floor.unwrap_or(f64::NAN);
        pass &= r.training.achieved && r.verdict == Verdict::Consistent && r.l_ub >= floor;
        min_ratio = min_ratio.min(r.l_ub / floor);
        n_ok_any |= r.n_ok;
        runs.push((cfg, canon(&run.report), encode_params(&run.params)));
    }
    let elapsed = t.elapsed();
    for (cfg, json, params) in &runs {
        let again = in_pool(RERUN_JOBS, || run_experiment(cfg).unwrap());
        if &canon(&again.report) != json || &encode_params(&again.params) != params {
            det.push(format!("experiment seed {}", cfg.run.seed));
        }
    }
    let m = base.model.as_ref().unwrap();
    lines.push(Line {
        id: 8,
        pass: pass && m.d == 64 && base.run.n == 256 && base.run.eps_fraction == Some(0.25) && elapsed.as_secs() <= 600,
        detail: format!(
            "10 seeds achieved and consistent, min L_ub / L_floor = {min_ratio:.3e}, sample-size premise met in {} runs, {}",
            if n_ok_any { "some" } else { "no" },
            secs(elapsed)
        ),
    });
}

fn main() {
    let mut lines = Vec::new();
    let mut det = Vec::new();
    let t = Instant::now();
    identities(&mut lines, &mut det);
    concentration(&mut lines, &mut det);
    constants(&mut lines, &mut det);
    formulas(&mut lines, &mut det);
    self_consistency(&mut lines, &mut det);
    experiments(&mut lines, &mut det);
    lines.push(Line {
        id: 9,
        pass: det.is_empty(),
        detail: if det.is_empty() {
            format!("criteria 1-8 rerun with {RERUN_JOBS} threads reproduce every number bit for bit")
        } else {
            format!("outputs differ across thread counts: {}", det.join(", "))
        },
    });
    let failed = lines.iter().filter(|l| !l.pass).count();
    for l in &lines {
        println!("criterion {} {}: {}", l.id, if l.pass { "PASS" } else { "FAIL" }, l.detail);
    }
    println!("acceptance: {}/{} criteria pass ({})", lines.len() - failed, lines.len(), secs(t.elapsed()));
    if failed > 0 && std::env::var_os("LAWROB_ACCEPTANCE_STRICT").is_some_and(|v| v == "1") {
        std::process::exit(1);
    }
}
