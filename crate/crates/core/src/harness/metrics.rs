//! Metrics rows and their CSV / JSON-lines encodings.
//!
//! Column order of `metrics.csv`:
//! `experiment, algorithm, optimizer, seed, tau, round, cohort, steps,
//! queries, exact_var, theta, local_loss, train_loss, eval_loss,
//! eval_accuracy, bytes_up, bytes_down, wall_steps`.
//!
//! Non-finite reals are written as the strings `inf`, `-inf` and `NaN` so the
//! JSON mirror stays valid. Absent values are empty in CSV and `null` in JSON.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Serialize, Serializer};

use crate::engine::RoundRecord;
use crate::error::{Error, Result};

pub const METRICS_COLUMNS: [&str; 18] = [
    "experiment",
    "algorithm",
    "optimizer",
    "seed",
    "tau",
    "round",
    "cohort",
    "steps",
    "queries",
    "exact_var",
    "theta",
    "local_loss",
    "train_loss",
    "eval_loss",
    "eval_accuracy",
    "bytes_up",
    "bytes_down",
    "wall_steps",
];

pub const QUERY_COLUMNS: [&str; 9] = [
    "experiment",
    "algorithm",
    "optimizer",
    "seed",
    "tau",
    "round",
    "step",
    "nu",
    "theta",
];

/// Serialises a real as a number when finite and as a string otherwise.
pub fn extended_real<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if v.is_nan() {
        s.serialize_str("NaN")
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

fn opt_extended_real<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) => extended_real(x, s),
        None => s.serialize_none(),
    }
}

/// Identifies the run a row belongs to.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunKey {
    pub experiment: String,
    pub algorithm: String,
    pub optimizer: String,
    pub seed: u64,
    pub tau: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub experiment: String,
    pub algorithm: String,
    pub optimizer: String,
    pub seed: u64,
    pub tau: usize,
    pub round: u64,
    /// Client ids joined by `;`.
    pub cohort: String,
    pub steps: usize,
    pub queries: usize,
    #[serde(serialize_with = "extended_real")]
    pub exact_var: f64,
    #[serde(serialize_with = "opt_extended_real")]
    pub theta: Option<f64>,
    #[serde(serialize_with = "extended_real")]
    pub local_loss: f64,
    #[serde(serialize_with = "extended_real")]
    pub train_loss: f64,
    #[serde(serialize_with = "extended_real")]
    pub eval_loss: f64,
    pub eval_accuracy: f64,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub wall_steps: u64,
}

impl MetricsRow {
    pub fn new(key: &RunKey, r: &RoundRecord) -> Self {
        MetricsRow {
            experiment: key.experiment.clone(),
            algorithm: key.algorithm.clone(),
            optimizer: key.optimizer.clone(),
            seed: key.seed,
            tau: key.tau,
            round: r.round,
            cohort: r.cohort.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(";"),
            steps: r.steps,
            queries: r.queries.len(),
            exact_var: r.exact_var,
            theta: r.theta,
            local_loss: r.local_loss,
            train_loss: r.train_loss,
            eval_loss: r.eval_loss,
            eval_accuracy: r.eval_accuracy,
            bytes_up: r.bytes_up,
            bytes_down: r.bytes_down,
            wall_steps: r.wall_steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryRow {
    pub experiment: String,
    pub algorithm: String,
    pub optimizer: String,
    pub seed: u64,
    pub tau: usize,
    pub round: u64,
    pub step: usize,
    #[serde(serialize_with = "extended_real")]
    pub nu: f64,
    #[serde(serialize_with = "extended_real")]
    pub theta: f64,
}

impl QueryRow {
    pub fn from_record(key: &RunKey, r: &RoundRecord) -> Vec<QueryRow> {
        r.queries
            .iter()
            .map(|q| QueryRow {
                experiment: key.experiment.clone(),
                algorithm: key.algorithm.clone(),
                optimizer: key.optimizer.clone(),
                seed: key.seed,
                tau: key.tau,
                round: r.round,
                step: q.step,
                nu: q.nu,
                theta: q.theta,
            })
            .collect()
    }
}

/// Writes `rows` as CSV with `columns` as the header, which is emitted even
/// when there are no rows.
pub fn write_csv<T: Serialize>(rows: &[T], columns: &[&str], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(BufWriter::new(file));
    w.write_record(columns)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// `metrics.csv` plus its `metrics.jsonl` mirror in `dir`.
pub fn emit_metrics(rows: &[MetricsRow], dir: &Path) -> Result<()> {
    write_csv(rows, &METRICS_COLUMNS, &dir.join("metrics.csv"))?;
    write_jsonl(rows, &dir.join("metrics.jsonl"))
}

/// `queries.csv`: one row per variance query.
pub fn emit_queries(rows: &[QueryRow], dir: &Path) -> Result<()> {
    write_csv(rows, &QUERY_COLUMNS, &dir.join("queries.csv"))
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
