//! CSV tables and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::lab::HReport;

use super::config::ExperimentConfig;

pub const REPORT_FILE: &str = "report.csv";
pub const CHECKS_FILE: &str = "checks.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";

pub const REPORT_HEADER: [&str; 9] = [
    "k",
    "nCells",
    "stateWeakGap",
    "stateStrongGap",
    "fluxWeakGap",
    "coeffWeakStarGap",
    "energyGap",
    "divCurlGap",
    "solveIterations",
];

pub const CHECKS_HEADER: [&str; 5] = ["check", "case", "value", "threshold", "passed"];

/// Fixed-width scientific notation so reports compare byte for byte.
pub fn format_real(v: f64) -> String {
    format!("{v:.12e}")
}

fn csv_error(e: csv::Error) -> std::io::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => e,
        other => std::io::Error::other(format!("{other:?}")),
    }
}

/// Writes the per-`k` table to `dir/report.csv`.
pub fn emit_report(report: &HReport, dir: &Path) -> std::io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(REPORT_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(csv_error)?;
    w.write_record(REPORT_HEADER).map_err(csv_error)?;
    for r in &report.rows {
        w.write_record([
            r.k.to_string(),
            r.n_cells.to_string(),
            format_real(r.state_weak_gap),
            format_real(r.state_strong_gap),
            format_real(r.flux_weak_gap),
            format_real(r.coeff_weak_star_gap),
            format_real(r.energy_gap),
            format_real(r.div_curl_gap),
            r.solve_iterations.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(path)
}

/// One named check of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Check {
    pub check: String,
    pub case: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl Check {
    /// Passes when `value <= threshold`.
    pub fn at_most(check: &str, case: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            check: check.into(),
            case: case.into(),
            value,
            threshold,
            passed: value <= threshold,
        }
    }

    /// Passes when `value >= threshold`.
    pub fn at_least(check: &str, case: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            check: check.into(),
            case: case.into(),
            value,
            threshold,
            passed: value >= threshold,
        }
    }

    pub fn flag(check: &str, case: impl Into<String>, passed: bool) -> Self {
        Self {
            check: check.into(),
            case: case.into(),
            value: if passed { 1.0 } else { 0.0 },
            threshold: 1.0,
            passed,
        }
    }
}

/// Writes the checks of an experiment to `dir/checks.csv`.
pub fn emit_checks(checks: &[Check], dir: &Path) -> std::io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(CHECKS_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(csv_error)?;
    w.write_record(CHECKS_HEADER).map_err(csv_error)?;
    for c in checks {
        w.write_record([
            c.check.clone(),
            c.case.clone(),
            format_real(c.value),
            format_real(c.threshold),
            c.passed.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(path)
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Manifest<'a> {
    pub manifest_version: u32,
    pub tool: &'static str,
    pub version: &'static str,
    pub experiment: &'static str,
    pub config: &'a ExperimentConfig,
    pub wall_time_seconds: f64,
    pub threads: usize,
    pub passed: bool,
    pub checks: &'a [Check],
    pub files: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub details: Option<serde_json::Value>,
}

/// Writes `manifest.json` and the resolved `config.toml` that reproduces the run.
pub fn emit_manifest(manifest: &Manifest<'_>, dir: &Path) -> std::io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(CONFIG_FILE), manifest.config.to_toml())?;
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(manifest).map_err(std::io::Error::other)?;
    fs::write(&path, text + "\n")?;
    Ok(path)
}
