//! On-disk artifacts of a run.
//!
//! `metrics.csv` has one row per round with the columns
//!
//! ```text
//! algorithm,partition,seed,round,accuracy,per_label,loss_total,loss_lc,loss_lgc,loss_lad,loss_prox,participants
//! ```
//!
//! `per_label` and `participants` are `;`-separated lists. Floats use the
//! shortest representation that parses back to the same value.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spikefed_core::fl::RoundReport;

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const PER_LABEL_FILE: &str = "per_label.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub algorithm: String,
    pub partition: String,
    pub seed: u64,
    pub round: usize,
    pub accuracy: f64,
    pub per_label: Vec<f64>,
    pub loss_total: f64,
    pub loss_lc: f64,
    pub loss_lgc: f64,
    pub loss_lad: f64,
    pub loss_prox: f64,
    pub participants: Vec<usize>,
}

/// Flat form used for the CSV (the csv crate cannot nest sequences).
#[derive(Serialize, Deserialize)]
struct CsvRow {
    algorithm: String,
    partition: String,
    seed: u64,
    round: usize,
    accuracy: f64,
    per_label: String,
    loss_total: f64,
    loss_lc: f64,
    loss_lgc: f64,
    loss_lad: f64,
    loss_prox: f64,
    participants: String,
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(";")
}

fn split<T: std::str::FromStr>(s: &str, column: &str) -> Result<Vec<T>, CliError> {
    if s.is_empty() {
        return Ok(vec![]);
    }
    s.split(';')
        .map(|v| {
            v.parse()
                .map_err(|_| CliError::Runtime(format!("bad value {v:?} in column {column}")))
        })
        .collect()
}

impl MetricsRow {
    pub fn from_report(algorithm: &str, partition: &str, seed: u64, r: &RoundReport) -> Self {
        let l = &r.mean_local_losses;
        MetricsRow {
            algorithm: algorithm.to_owned(),
            partition: partition.to_owned(),
            seed,
            round: r.round,
            accuracy: r.global_accuracy,
            per_label: r.per_label_accuracy.clone(),
            loss_total: l.total,
            loss_lc: l.lc,
            loss_lgc: l.lgc,
            loss_lad: l.lad,
            loss_prox: l.prox,
            participants: r.participating_clients.clone(),
        }
    }

    fn to_csv(&self) -> CsvRow {
        CsvRow {
            algorithm: self.algorithm.clone(),
            partition: self.partition.clone(),
            seed: self.seed,
            round: self.round,
            accuracy: self.accuracy,
            per_label: join(&self.per_label),
            loss_total: self.loss_total,
            loss_lc: self.loss_lc,
            loss_lgc: self.loss_lgc,
            loss_lad: self.loss_lad,
            loss_prox: self.loss_prox,
            participants: join(&self.participants),
        }
    }

    fn from_csv(row: CsvRow) -> Result<Self, CliError> {
        Ok(MetricsRow {
            per_label: split(&row.per_label, "per_label")?,
            participants: split(&row.participants, "participants")?,
            algorithm: row.algorithm,
            partition: row.partition,
            seed: row.seed,
            round: row.round,
            accuracy: row.accuracy,
            loss_total: row.loss_total,
            loss_lc: row.loss_lc,
            loss_lgc: row.loss_lgc,
            loss_lad: row.loss_lad,
            loss_prox: row.loss_prox,
        })
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r.to_csv())?;
    }
    w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, CliError> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    r.deserialize::<CsvRow>()
        .map(|row| MetricsRow::from_csv(row?))
        .collect()
}

/// Final per-label diagnostics of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerLabelReport {
    pub algorithm: String,
    pub partition: String,
    pub seed: u64,
    pub final_round: usize,
    pub accuracy: f64,
    pub per_label_accuracy: Vec<f64>,
    pub test_label_counts: Vec<usize>,
    /// `[client][label]` sample counts of the training partition.
    pub client_label_counts: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    /// `<crate version>+<first 12 hex digits of config_hash>`.
    pub version: String,
    pub config_hash: String,
    pub config: String,
    pub seeds: Vec<u64>,
    pub algorithms: Vec<String>,
    pub partition: String,
    /// Paths relative to the directory holding the manifest.
    pub outputs: Vec<PathBuf>,
}

pub fn artifact_version(config_hash: &str) -> String {
    format!("{}+{}", env!("CARGO_PKG_VERSION"), &config_hash[..12])
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}
