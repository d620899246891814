//! `report`: aggregates experiment reports into one table and plot.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::Format;
use crate::error::{CliError, CliResult};
use crate::experiment::{ExperimentReport, Verdict, REPORT_SCHEMA};
use crate::output;
use crate::svg::{Mark, Plot};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub path: String,
    pub seed: u64,
    pub config_hash: String,
    pub n: usize,
    pub d: usize,
    pub p: usize,
    pub sigma2: f64,
    pub eps: f64,
    pub achieved: bool,
    pub l_lb: f64,
    pub l_ub: f64,
    pub l_floor: Option<f64>,
    pub n_ok: bool,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub path: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub rows: Vec<ReportRow>,
    pub skipped: Vec<Skipped>,
    pub consistent: usize,
    pub violations: usize,
    pub not_applicable: usize,
}

/// Expands the patterns; a pattern naming a directory means its `report.json`.
pub fn expand(patterns: &[String]) -> CliResult<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for pat in patterns {
        let entries = glob::glob(pat).map_err(|e| CliError::Config(format!("bad pattern {pat:?}: {e}")))?;
        for entry in entries {
            let p = entry.map_err(|e| CliError::Io(e.into()))?;
            let p = if p.is_dir() { p.join("report.json") } else { p };
            if p.is_file() && !paths.contains(&p) {
                paths.push(p);
            }
        }
    }
    paths.sort();
    Ok(paths)
}

fn load(path: &Path) -> Result<ExperimentReport, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    match v.get("schema").and_then(|s| s.as_str()) {
        Some(REPORT_SCHEMA) => {}
        other => return Err(format!("schema {other:?}, expected {REPORT_SCHEMA:?}")),
    }
    serde_json::from_value(v).map_err(|e| e.to_string())
}

pub fn aggregate(paths: &[PathBuf]) -> Aggregate {
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for p in paths {
        match load(p) {
            Ok(r) => rows.push(ReportRow {
                path: p.display().to_string(),
                seed: r.seed,
                config_hash: r.config_hash,
                n: r.n,
                d: r.d,
                p: r.p,
                sigma2: r.sigma2.sigma2,
                eps: r.eps,
                achieved: r.training.achieved,
                l_lb: r.l_lb,
                l_ub: r.l_ub,
                l_floor: r.l_floor,
                n_ok: r.n_ok,
                verdict: r.verdict,
            }),
            Err(reason) => skipped.push(Skipped {
                path: p.display().to_string(),
                reason,
            }),
        }
    }
    let count = |v: Verdict| rows.iter().filter(|r| r.verdict == v).count();
    Aggregate {
        consistent: count(Verdict::Consistent),
        violations: count(Verdict::Violation),
        not_applicable: count(Verdict::NotApplicable),
        rows,
        skipped,
    }
}

pub fn write_aggregate(dir: &Path, agg: &Aggregate, formats: &[Format]) -> CliResult<()> {
    output::ensure_dir(dir)?;
    if formats.contains(&Format::Csv) {
        let header: Vec<String> = [
            "path", "seed", "config_hash", "n", "d", "p", "sigma2", "eps", "achieved", "l_lb", "l_ub", "l_floor",
            "n_ok", "verdict",
        ]
        .map(String::from)
        .to_vec();
        let rows: Vec<Vec<String>> = agg
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.path.clone(),
                    r.seed.to_string(),
                    r.config_hash.clone(),
                    r.n.to_string(),
                    r.d.to_string(),
                    r.p.to_string(),
                    output::num(r.sigma2),
                    output::num(r.eps),
                    r.achieved.to_string(),
                    output::num(r.l_lb),
                    output::num(r.l_ub),
                    r.l_floor.map(output::num).unwrap_or_default(),
                    r.n_ok.to_string(),
                    serde_json::to_value(r.verdict).unwrap().as_str().unwrap().to_string(),
                ]
            })
            .collect();
        output::write_csv(&dir.join("report.csv"), &header, &rows)?;
    }
    if formats.contains(&Format::Json) {
        output::write_json(&dir.join("report.json"), agg)?;
    }
    if formats.contains(&Format::Svg) {
        let pts = |f: fn(&ReportRow) -> f64| -> Vec<(f64, f64)> {
            agg.rows
                .iter()
                .filter_map(|r| r.l_floor.map(|fl| (fl, f(r))))
                .collect()
        };
        let plot = Plot {
            log_x: true,
            log_y: true,
            diagonal: true,
            ..Plot::new("measured Lipschitz constants vs floor", "L_floor", "L")
        }
        .series("L_lb", pts(|r| r.l_lb), Mark::Points)
        .series("L_ub", pts(|r| r.l_ub), Mark::Points);
        std::fs::write(dir.join("report.svg"), plot.render())?;
    }
    Ok(())
}
