//! Error metrics, coefficient traces and result files.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ConservationLedger, CoefficientState};
use crate::error::{Error, Result};

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    /// `√(Σ|ψ̂ − ψ| / Σ|ψ|)`, square root included.
    pub rmae: f64,
    /// `√(Σ|ψ̂ − ψ|² / Σ|ψ|²)`.
    pub rrmse: f64,
    /// Same value as `rrmse`.
    pub rel_l2: f64,
    /// `Σ|ψ̂ − ψ| / Σ|ψ|`.
    pub rel_l1: f64,
    pub n_eval: usize,
    pub eval_grid: String,
}

impl ErrorReport {
    pub fn with_grid(mut self, grid: impl Into<String>) -> Self {
        self.eval_grid = grid.into();
        self
    }
}

/// Sums run in index order so repeated calls are bitwise identical.
pub fn compute_errors(pred: &[Complex64], truth: &[Complex64]) -> Result<ErrorReport> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "need equal non-empty lengths, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    let (mut abs_diff, mut abs_truth, mut sq_diff, mut sq_truth) = (0.0, 0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        let e = (p - t).norm();
        let a = t.norm();
        abs_diff += e;
        abs_truth += a;
        sq_diff += e * e;
        sq_truth += a * a;
    }
    if !(abs_truth > 0.0) {
        return Err(Error::UndefinedMetric("truth is identically zero".into()));
    }
    let rel_l1 = abs_diff / abs_truth;
    let rrmse = (sq_diff / sq_truth).sqrt();
    Ok(ErrorReport {
        rmae: rel_l1.sqrt(),
        rrmse,
        rel_l2: rrmse,
        rel_l1,
        n_eval: pred.len(),
        eval_grid: String::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub t: f64,
    pub index: usize,
    pub re: f64,
    pub im: f64,
    pub abs: f64,
}

/// One series per requested index, each ordered by time.
pub fn coefficient_traces(snapshots: &[CoefficientState], indices: &[usize]) -> Result<Vec<Vec<TracePoint>>> {
    let r = snapshots.first().map_or(0, |s| s.rank());
    if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
        return Err(Error::InvalidArgument(format!("trace index {bad} out of range for rank {r}")));
    }
    Ok(indices
        .iter()
        .map(|&i| {
            snapshots
                .iter()
                .map(|s| {
                    let c = Complex64::new(s.c_re[i], s.c_im[i]);
                    TracePoint {
                        t: s.t,
                        index: i,
                        re: c.re,
                        im: c.im,
                        abs: c.norm(),
                    }
                })
                .collect()
        })
        .collect())
}

/// Mean and sample standard deviation; the deviation is 0 for one value.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, var.sqrt()))
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Serialization(format!("{other:?}")),
    }
}

fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// `metric,value` rows.
pub fn write_errors_csv(path: &Path, report: &ErrorReport) -> Result<()> {
    let rows = [
        ("rmae", report.rmae),
        ("rrmse", report.rrmse),
        ("rel_l2", report.rel_l2),
        ("rel_l1", report.rel_l1),
        ("n_eval", report.n_eval as f64),
    ];
    write_rows(
        path,
        &["metric", "value"],
        rows.iter().map(|(k, v)| [k.to_string(), v.to_string()]),
    )
}

/// `metric,value` rows from arbitrary named scalars.
pub fn write_metrics_csv(path: &Path, metrics: &[(String, f64)]) -> Result<()> {
    write_rows(
        path,
        &["metric", "value"],
        metrics.iter().map(|(k, v)| [k.clone(), v.to_string()]),
    )
}

/// `t,N,E,E_kin,E_pot,E_int` rows.
pub fn write_conservation_csv(path: &Path, ledger: &ConservationLedger) -> Result<()> {
    write_rows(
        path,
        &["t", "N", "E", "E_kin", "E_pot", "E_int"],
        ledger
            .mass_history
            .iter()
            .zip(&ledger.energy_history)
            .map(|((t, n), (_, e))| {
                [t, n, &e.total, &e.kinetic, &e.potential, &e.interaction].map(|v| v.to_string())
            }),
    )
}

/// `t,index,re,im,abs` rows.
pub fn write_traces_csv(path: &Path, traces: &[Vec<TracePoint>]) -> Result<()> {
    write_rows(
        path,
        &["t", "index", "re", "im", "abs"],
        traces.iter().flatten().map(|p| {
            [
                p.t.to_string(),
                p.index.to_string(),
                p.re.to_string(),
                p.im.to_string(),
                p.abs.to_string(),
            ]
        }),
    )
}

/// `phase,seconds` rows.
pub fn write_timings_csv(path: &Path, timings: &[(String, f64)]) -> Result<()> {
    write_rows(
        path,
        &["phase", "seconds"],
        timings.iter().map(|(k, v)| [k.clone(), v.to_string()]),
    )
}

/// Generic table writer for per-run extras such as snapshots or sweeps.
pub fn write_table_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    write_rows(path, header, rows.iter().map(|r| r.iter().cloned()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerSummary {
    pub drift_max_mass: f64,
    pub drift_max_energy: f64,
    pub relative_energy_drift: f64,
    pub records: usize,
}

impl From<&ConservationLedger> for LedgerSummary {
    fn from(l: &ConservationLedger) -> Self {
        Self {
            drift_max_mass: l.drift_max_mass,
            drift_max_energy: l.drift_max_energy,
            relative_energy_drift: l.relative_energy_drift(),
            records: l.mass_history.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub ledger: Option<LedgerSummary>,
    pub errors: Vec<(String, ErrorReport)>,
    /// Non-timing scalars such as ranks, iteration counts and bounds.
    pub extras: serde_json::Map<String, serde_json::Value>,
    pub timings: Vec<(String, f64)>,
}

impl RunSummary {
    pub fn new(config: serde_json::Value, config_hash: String, seed: u64) -> Self {
        Self {
            schema_version: SUMMARY_SCHEMA_VERSION,
            config_hash,
            config,
            seed,
            ledger: None,
            errors: Vec::new(),
            extras: serde_json::Map::new(),
            timings: Vec::new(),
        }
    }
}

/// Pretty JSON; a missing ledger is written as `null` with a warning.
pub fn emit_run_summary(summary: &RunSummary, path: &Path) -> Result<()> {
    if summary.ledger.is_none() {
        log::warn!("run summary has no conservation ledger; writing null");
    }
    let text = serde_json::to_string_pretty(summary)?;
    let mut f = File::create(path)?;
    f.write_all(text.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}
