//! Metrics CSV: `#`-prefixed provenance lines, a fixed header, one row per
//! outer step. Reals are written with 17 significant digits.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::solvers::OuterRow;

pub const HEADER: &str = "outer_iter,phi_K,hypergrad_g_norm,fp_residual_g_lb,inner_K,wall_ms";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsFile {
    /// Ordered `(key, value)` provenance entries.
    pub provenance: Vec<(String, String)>,
    pub rows: Vec<OuterRow>,
}

fn real(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn render_metrics(file: &MetricsFile) -> String {
    let mut out = String::new();
    for (k, v) in &file.provenance {
        writeln!(out, "# {k} {v}").unwrap();
    }
    out.push_str(HEADER);
    out.push('\n');
    for r in &file.rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.outer_iter,
            real(r.phi_k),
            real(r.hypergrad_g_norm),
            real(r.fp_residual_g_lb),
            r.inner_k,
            real(r.wall_ms)
        )
        .unwrap();
    }
    out
}

pub fn emit_metrics(file: &MetricsFile, path: &Path) -> Result<()> {
    std::fs::write(path, render_metrics(file))?;
    Ok(())
}

fn trace_err(msg: impl Into<String>) -> Error {
    Error::Trace(msg.into())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, line: u64) -> Result<T> {
    rec[i]
        .parse()
        .map_err(|_| trace_err(format!("line {line}: cannot parse `{}`", &rec[i])))
}

pub fn parse_metrics(text: &str) -> Result<MetricsFile> {
    let mut provenance = Vec::new();
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        let body = line[1..].trim_start();
        let (k, v) = body.split_once(' ').unwrap_or((body, ""));
        provenance.push((k.to_string(), v.to_string()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| trace_err(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>().join(",") != HEADER {
        return Err(trace_err("header does not match the metrics schema"));
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| trace_err(e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 6 {
            return Err(trace_err(format!("line {line}: expected 6 fields, got {}", rec.len())));
        }
        let row = OuterRow {
            outer_iter: field(&rec, 0, line)?,
            phi_k: field(&rec, 1, line)?,
            hypergrad_g_norm: field(&rec, 2, line)?,
            fp_residual_g_lb: field(&rec, 3, line)?,
            inner_k: field(&rec, 4, line)?,
            wall_ms: field(&rec, 5, line)?,
        };
        if !row.phi_k.is_finite() {
            return Err(trace_err(format!("line {line}: phi_K is not finite")));
        }
        rows.push(row);
    }
    Ok(MetricsFile { provenance, rows })
}
