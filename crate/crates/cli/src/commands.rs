//! Command-line surface: argument parsing and the five subcommands.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::json;

use crate::bound::{compute_bound, render_trace};
use crate::concentration::{run_concentration, statement_ids};
use crate::config::{ExperimentConfig, Format, Overrides};
use crate::error::{exit, CliError, CliResult};
use crate::experiment::{run_experiment, write_experiment, Verdict};
use crate::identities::{run_identity_suites, SuiteSizes};
use crate::output;
use crate::report::{aggregate, expand, write_aggregate};
use crate::svg::{Mark, Plot};

#[derive(Debug, Parser)]
#[command(name = "lawrob", version, about = "Numerical lab for the law of robustness under Bregman losses")]
pub struct Cli {
    /// TOML config with loss, model, class, run and output blocks.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides run.seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides output.dir.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output formats (repeatable); overrides output.formats.
    #[arg(long = "format", global = true, value_enum)]
    pub formats: Vec<Format>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Randomized checks of the decomposition, three-point and gradient identities.
    VerifyIdentities {
        /// Flip a sign in the decomposition so the suite must fail.
        #[arg(long)]
        sabotage: bool,
    },
    /// Monte Carlo tail frequencies against the analytic bounds.
    CheckConcentration {
        /// Statement id (repeatable); defaults to run.statements.
        #[arg(long = "statement")]
        statements: Vec<String>,
    },
    /// Sample-size requirement, Lipschitz floor and failure budget.
    ComputeBound,
    /// Train to overfit and compare the measured Lipschitz constant with the floor.
    RunExperiment,
    /// Aggregate experiment reports matched by glob patterns or directories.
    Report {
        #[arg(required = true)]
        patterns: Vec<String>,
    },
}

impl Cli {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            out: self.out.clone(),
            jobs: self.jobs,
            formats: self.formats.clone(),
        }
    }

    /// Loads `--config`, or a default config when `allow_default` is set.
    fn load_config(&self, allow_default: bool) -> CliResult<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None if allow_default => ExperimentConfig::from_toml("[run]\nseed = 0\n")?,
            None => return Err(CliError::Config("--config is required for this command".into())),
        };
        cfg.apply(&self.overrides());
        Ok(cfg)
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::CONFIG } else { exit::OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("lawrob: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> CliResult<i32> {
    if let Command::Report { patterns } = &cli.command {
        return in_pool(cli.jobs.unwrap_or(1), || report(cli, patterns));
    }
    let cfg = cli.load_config(matches!(cli.command, Command::VerifyIdentities { .. }))?;
    in_pool(cfg.jobs(), || match &cli.command {
        Command::VerifyIdentities { sabotage } => verify_identities(&cfg, *sabotage),
        Command::CheckConcentration { statements } => check_concentration(&cfg, statements),
        Command::ComputeBound => bound(&cfg),
        Command::RunExperiment => experiment(&cfg),
        Command::Report { .. } => unreachable!(),
    })
}

fn in_pool<F: FnOnce() -> CliResult<i32> + Send>(jobs: usize, f: F) -> CliResult<i32> {
    if jobs == 0 {
        return Err(CliError::Config("--jobs must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Numeric(e.to_string()))?;
    pool.install(f)
}

fn out_dir(cfg: &ExperimentConfig) -> CliResult<&Path> {
    output::ensure_dir(&cfg.output.dir)?;
    Ok(&cfg.output.dir)
}

fn verify_identities(cfg: &ExperimentConfig, sabotage: bool) -> CliResult<i32> {
    let sizes = SuiteSizes::from_run(&cfg.run);
    let rep = run_identity_suites(cfg.run.seed, &sizes, sabotage || cfg.run.sabotage)?;
    let dir = out_dir(cfg)?;
    for r in &rep.results {
        eprintln!(
            "{:<12} {:<15} cases={:<7} worst={:.3e} tol={:.0e} {}",
            r.suite,
            r.loss,
            r.cases,
            r.worst,
            r.tolerance,
            if r.pass { "ok" } else { "FAIL" }
        );
    }
    if cfg.output.wants(Format::Json) {
        output::write_json(&dir.join("identities.json"), &rep)?;
    }
    let header: Vec<String> = ["suite", "loss", "cases", "worst", "tolerance", "pass"].map(String::from).to_vec();
    let rows: Vec<Vec<String>> = rep
        .results
        .iter()
        .map(|r| {
            vec![
                r.suite.clone(),
                r.loss.clone(),
                r.cases.to_string(),
                output::num(r.worst),
                output::num(r.tolerance),
                r.pass.to_string(),
            ]
        })
        .collect();
    output::write_csv(&dir.join("worst_residuals.csv"), &header, &rows)?;
    if let Some(bad) = rep.results.iter().find(|r| !r.pass) {
        let failure = json!({
            "suite": bad.suite,
            "loss": bad.loss,
            "worst": bad.worst,
            "tolerance": bad.tolerance,
            "case": bad.first_failure,
        });
        output::write_json(&dir.join("first_failure.json"), &failure)?;
        eprintln!("first failure: {}", serde_json::to_string(&failure).unwrap_or_default());
        return Ok(exit::CHECK_FAILED);
    }
    Ok(exit::OK)
}

fn check_concentration(cfg: &ExperimentConfig, requested: &[String]) -> CliResult<i32> {
    let ids = statement_ids(cfg, requested)?;
    let rep = run_concentration(cfg, &ids)?;
    let dir = out_dir(cfg)?;
    // tails.jsonl accumulates across runs
    let mut f = OpenOptions::new().create(true).append(true).open(dir.join("tails.jsonl"))?;
    for r in &rep.reports {
        let mut v = serde_json::to_value(r).map_err(|e| CliError::Numeric(e.to_string()))?;
        v["config_hash"] = json!(rep.config_hash);
        v["seed"] = json!(rep.seed);
        writeln!(f, "{}", crate::config::canonical_json(&v))?;
    }
    for e in &rep.errors {
        eprintln!("{}: {}", e.statement_id, e.error);
    }
    for r in &rep.reports {
        eprintln!(
            "{:<6} eps={:.4e} freq={:.4e} bound={:.4e}{} {}",
            r.statement_id.name(),
            r.eps,
            r.empirical_freq,
            r.analytic_bound,
            if r.vacuous { " (vacuous)" } else { "" },
            if r.pass { "ok" } else { "FAIL" }
        );
    }
    if cfg.output.wants(Format::Json) {
        output::write_json(&dir.join("concentration.json"), &rep)?;
    }
    if cfg.output.wants(Format::Csv) {
        let header: Vec<String> = [
            "statement_id", "eps", "eps_multiplier", "n", "trials", "empirical_freq", "analytic_bound", "mc_stderr",
            "vacuous", "pass",
        ]
        .map(String::from)
        .to_vec();
        let rows: Vec<Vec<String>> = rep
            .reports
            .iter()
            .map(|r| {
                vec![
                    r.statement_id.name().to_string(),
                    output::num(r.eps),
                    output::num(r.eps_multiplier),
                    r.n.to_string(),
                    r.trials.to_string(),
                    output::num(r.empirical_freq),
                    output::num(r.analytic_bound),
                    output::num(r.mc_stderr),
                    r.vacuous.to_string(),
                    r.pass.to_string(),
                ]
            })
            .collect();
        output::write_csv(&dir.join("tails.csv"), &header, &rows)?;
    }
    if cfg.output.wants(Format::Svg) {
        let mut plot = Plot {
            log_y: true,
            ..Plot::new("tail frequency and bound", "eps multiplier", "probability")
        };
        for id in &ids {
            let rs: Vec<_> = rep.reports.iter().filter(|r| r.statement_id == *id).collect();
            if rs.is_empty() {
                continue;
            }
            // zero frequencies cannot sit on a log axis
            let freq = rs
                .iter()
                .filter(|r| r.empirical_freq > 0.0)
                .map(|r| (r.eps_multiplier, r.empirical_freq))
                .collect();
            let bound = rs.iter().map(|r| (r.eps_multiplier, r.analytic_bound.min(1.0))).collect();
            plot = plot
                .series(&format!("{} freq", id.name()), freq, Mark::Points)
                .series(&format!("{} bound", id.name()), bound, Mark::Line);
        }
        std::fs::write(dir.join("tails.svg"), plot.render())?;
    }
    if !rep.errors.is_empty() {
        return Ok(exit::CONFIG);
    }
    Ok(if rep.pass { exit::OK } else { exit::CHECK_FAILED })
}

fn bound(cfg: &ExperimentConfig) -> CliResult<i32> {
    let out = compute_bound(cfg)?;
    let dir = out_dir(cfg)?;
    eprint!("{}", render_trace(&out));
    let v = crate::config::sort_keys(&serde_json::to_value(&out).map_err(|e| CliError::Numeric(e.to_string()))?);
    println!("{}", serde_json::to_string_pretty(&v).map_err(|e| CliError::Numeric(e.to_string()))?);
    output::write_json(&dir.join("bound.json"), &out)?;
    Ok(if out.self_consistency.pass { exit::OK } else { exit::CHECK_FAILED })
}

fn experiment(cfg: &ExperimentConfig) -> CliResult<i32> {
    let run = run_experiment(cfg)?;
    write_experiment(&cfg.output.dir, cfg, &run)?;
    let r = &run.report;
    eprintln!(
        "seed={} sigma2={:.4e} eps={:.4e} achieved={} steps={} L_lb={:.4e} L_ub={:.4e} L_floor={} n_ok={} verdict={}",
        r.seed,
        r.sigma2.sigma2,
        r.eps,
        r.training.achieved,
        r.training.steps,
        r.l_lb,
        r.l_ub,
        r.l_floor.map_or("none".into(), |f| format!("{f:.4e}")),
        r.n_ok,
        serde_json::to_value(r.verdict).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
    );
    Ok(if r.verdict == Verdict::Violation {
        exit::CHECK_FAILED
    } else {
        exit::OK
    })
}

fn report(cli: &Cli, patterns: &[String]) -> CliResult<i32> {
    let paths = expand(patterns)?;
    let agg = aggregate(&paths);
    for s in &agg.skipped {
        eprintln!("warning: skipping {}: {}", s.path, s.reason);
    }
    if agg.rows.is_empty() {
        return Err(CliError::Config(format!(
            "no valid experiment reports matched ({} skipped)",
            agg.skipped.len()
        )));
    }
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("report"));
    let formats = if cli.formats.is_empty() {
        vec![Format::Csv, Format::Json]
    } else {
        cli.formats.clone()
    };
    write_aggregate(&dir, &agg, &formats)?;
    eprintln!(
        "{} reports: {} consistent, {} violations, {} not applicable, {} skipped",
        agg.rows.len(),
        agg.consistent,
        agg.violations,
        agg.not_applicable,
        agg.skipped.len()
    );
    Ok(if agg.violations > 0 { exit::CHECK_FAILED } else { exit::OK })
}
