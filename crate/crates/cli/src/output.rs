//! File writers: CSV tables, JSON and JSON-lines reports, parameter dumps.

use std::fs;
use std::io::Write;
use std::path::Path;

use lawrob_core::{DecompositionRecord, Sample};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::sort_keys;
use crate::error::{CliError, CliResult};

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Pretty JSON with sorted keys and a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let v = sort_keys(&serde_json::to_value(value).map_err(|e| CliError::Numeric(e.to_string()))?);
    let mut text = serde_json::to_string_pretty(&v).map_err(|e| CliError::Numeric(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// One compact JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> CliResult<()> {
    let mut out = String::new();
    for r in records {
        let v = sort_keys(&serde_json::to_value(r).map_err(|e| CliError::Numeric(e.to_string()))?);
        out.push_str(&serde_json::to_string(&v).map_err(|e| CliError::Numeric(e.to_string()))?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Shortest round-trip decimal form.
pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::Io(io),
        other => CliError::Numeric(format!("{other:?}")),
    }
}

/// `g,x_0..x_{d-1},y_0..y_{K-1}`
pub fn write_samples_csv(path: &Path, samples: &[Sample]) -> CliResult<()> {
    let (d, k) = samples.first().map_or((0, 0), |s| (s.x.len(), s.y.len()));
    let mut header = vec!["g".to_string()];
    header.extend((0..d).map(|i| format!("x_{i}")));
    header.extend((0..k).map(|i| format!("y_{i}")));
    let rows: Vec<Vec<String>> = samples
        .iter()
        .map(|s| {
            let mut r = vec![s.g.to_string()];
            r.extend(s.x.iter().chain(&s.y).map(|&v| num(v)));
            r
        })
        .collect();
    write_csv(path, &header, &rows)
}

pub fn write_decomposition_csv(path: &Path, records: &[DecompositionRecord]) -> CliResult<()> {
    let header: Vec<String> = ["i", "z", "phi1", "phi2", "gamma1", "gamma2", "gamma3", "residual"]
        .map(String::from)
        .to_vec();
    let rows: Vec<Vec<String>> = records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = vec![i.to_string()];
            row.extend([r.z, r.phi1, r.phi2, r.gamma1, r.gamma2, r.gamma3, r.residual].map(num));
            row
        })
        .collect();
    write_csv(path, &header, &rows)
}

/// Parameter vector as a little-endian `u64` length followed by `f64` values.
pub fn encode_params(w: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * w.len());
    out.extend_from_slice(&(w.len() as u64).to_le_bytes());
    for v in w {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_params(bytes: &[u8]) -> CliResult<Vec<f64>> {
    let bad = |m: &str| CliError::Config(format!("parameter file: {m}"));
    let head: [u8; 8] = bytes.get(..8).ok_or_else(|| bad("missing length prefix"))?.try_into().unwrap();
    let len = u64::from_le_bytes(head) as usize;
    let body = &bytes[8..];
    if body.len() != len.checked_mul(8).ok_or_else(|| bad("length overflows"))? {
        return Err(bad(&format!("expected {len} values, found {} bytes", body.len())));
    }
    Ok(body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Writes `params.bin` and a `key = value` manifest next to it.
pub fn write_params(dir: &Path, w: &[f64], manifest: &[(&str, String)]) -> CliResult<()> {
    let bytes = encode_params(w);
    fs::write(dir.join("params.bin"), &bytes)?;
    let mut f = fs::File::create(dir.join("params.manifest.txt"))?;
    writeln!(f, "file = params.bin")?;
    writeln!(f, "format = u64 little-endian count, then f64 little-endian values")?;
    writeln!(f, "count = {}", w.len())?;
    writeln!(f, "sha256 = {}", hex::encode(Sha256::digest(&bytes)))?;
    for (k, v) in manifest {
        writeln!(f, "{k} = {v}")?;
    }
    Ok(())
}

/// Drops timing fields so two reports can be compared for determinism.
pub fn strip_timing(v: &Value) -> Value {
    match v {
        Value::Object(m) => Value::Object(
            m.iter()
                .filter(|(k, _)| k.as_str() != "timing")
                .map(|(k, v)| (k.clone(), strip_timing(v)))
                .collect(),
        ),
        Value::Array(a) => Value::Array(a.iter().map(strip_timing).collect()),
        other => other.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_round_trip() {
        let w = vec![1.5, -0.0, f64::MIN_POSITIVE, 3.0e300];
        let bytes = encode_params(&w);
        assert_eq!(bytes.len(), 8 + 32);
        assert_eq!(&bytes[..8], &4u64.to_le_bytes());
        let back = decode_params(&bytes).unwrap();
        assert_eq!(
            back.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            w.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert!(decode_params(&bytes[..20]).is_err());
        assert!(decode_params(&[1, 2]).is_err());
    }

    #[test]
    fn timing_is_stripped_at_every_level() {
        let v: Value = serde_json::json!({"a": 1, "timing": {"s": 2}, "b": [{"timing": 3, "c": 4}]});
        assert_eq!(strip_timing(&v), serde_json::json!({"a": 1, "b": [{"c": 4}]}));
    }

    #[test]
    fn csv_headers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let s = vec![Sample {
            x: vec![0.5, 1.0],
            y: vec![0.25],
            g: 0,
        }];
        write_samples_csv(&p, &s).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text, "g,x_0,x_1,y_0\n0,0.5,1,0.25\n");
    }
}
