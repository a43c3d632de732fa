//! CSV writers. Every CSV gets a header row and a sidecar
//! `<name>.csv.meta.json` holding everything needed to regenerate it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::HarnessError;

pub const ARTIFACT: &str = "mmpos-harness";
pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundsRow {
    pub snr_db: f64,
    pub sqrt_crb_deg: f64,
    pub peb_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub snr_db: f64,
    pub rmse: f64,
    pub bound: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BeamRow {
    pub theta_deg: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HwiRow {
    pub axis_value: f64,
    pub rmse: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogRow {
    pub iteration: usize,
    pub loss: f64,
    pub lr: f64,
}

/// Provenance written next to each CSV.
#[derive(Debug, Clone, Serialize)]
pub struct Sidecar<'a> {
    pub artifact: &'static str,
    pub artifact_version: &'static str,
    pub command: &'a str,
    /// Which output of the command this file is.
    pub output: &'a str,
    pub seed: u64,
    pub trials: usize,
    pub columns: &'a [&'a str],
    pub units: &'a str,
    /// Checkpoints read by the command, if any.
    pub inputs: Vec<String>,
    pub config: &'a ExperimentConfig,
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    let mut name = csv.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    csv.with_file_name(name)
}

/// Writes `rows` under `columns` plus the sidecar. The column names must
/// match the field order of `T`.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T], sidecar: &Sidecar<'_>) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(sidecar.columns)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    let mut json = serde_json::to_string_pretty(sidecar)?;
    json.push('\n');
    fs::write(sidecar_path(path), json)?;
    Ok(())
}
