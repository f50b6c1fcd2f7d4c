//! Experiment configuration: a flat TOML document with snake_case keys.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::assembly::Density;
use crate::fields::FracParams;
use crate::lab::{standard_loads, LabSettings, MAX_FINE_CELLS};
use crate::quadrature::QuadratureRule;
use crate::solver::default_tolerance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    HSufficiency,
    HNecessity,
    CheckerboardContrast,
    CalculusSelftest,
    SolverSelftest,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::HSufficiency => "h-sufficiency",
            ExperimentKind::HNecessity => "h-necessity",
            ExperimentKind::CheckerboardContrast => "checkerboard-contrast",
            ExperimentKind::CalculusSelftest => "calculus-selftest",
            ExperimentKind::SolverSelftest => "solver-selftest",
        }
    }
}

/// Load names accepted in `loads`.
pub const LOAD_NAMES: [&str; 3] = ["one", "sine", "bump"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub s: f64,
    pub p: f64,
    pub k_list: Vec<usize>,
    pub n_cells_base: usize,
    pub mean: f64,
    pub amplitude: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Solver tolerance; the default depends on `p`.
    pub tol: Option<f64>,
    pub points_per_cell: usize,
    pub diagonal_levels: usize,
    pub grading_ratio: f64,
    pub output_path: PathBuf,
    /// Worker threads, 0 for one per core.
    pub threads: usize,
    pub loads: Vec<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let rule = QuadratureRule::default();
        Self {
            experiment: ExperimentKind::HSufficiency,
            s: 0.4,
            p: 2.0,
            k_list: vec![1, 2, 4, 8, 16],
            n_cells_base: 64,
            mean: 2.0,
            amplitude: 1.0,
            alpha: 1.0,
            beta: 3.0,
            tol: None,
            points_per_cell: rule.points_per_cell,
            diagonal_levels: rule.diagonal_levels,
            grading_ratio: rule.grading_ratio,
            output_path: PathBuf::from("hlab-out"),
            threads: 0,
            loads: LOAD_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// A rejected configuration, naming the offending key.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid config key `{key}`: {message}")]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

fn bad(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        key: key.to_string(),
        message: message.into(),
    }
}

/// Name of the key on the line where a TOML error starts.
fn key_at(text: &str, offset: usize) -> Option<String> {
    let start = text[..offset.min(text.len())].rfind('\n').map_or(0, |i| i + 1);
    let line = text[start..].lines().next()?;
    let key = line.split('=').next()?.trim().trim_matches('"');
    (!key.is_empty()).then(|| key.to_string())
}

impl ExperimentConfig {
    /// Parses and validates a TOML document.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = toml::from_str(text).map_err(|e| {
            let key = e.span().and_then(|s| key_at(text, s.start)).unwrap_or_else(|| "<document>".into());
            bad(&key, e.message().trim())
        })?;
        let known = toml::Value::try_from(Self::default()).ok();
        for key in table.keys() {
            let allowed = key == "tol"
                || known
                    .as_ref()
                    .and_then(|v| v.as_table())
                    .is_some_and(|t| t.contains_key(key));
            if !allowed {
                return Err(bad(key, "unknown key"));
            }
        }
        for (key, value) in &table {
            let mut single = toml::Table::new();
            single.insert(key.clone(), value.clone());
            if let Err(e) = toml::Value::Table(single).try_into::<Self>() {
                return Err(bad(key, e.message().trim()));
            }
        }
        let config: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| bad("<document>", e.message().trim()))?;
        config.validate()?;
        Ok(config)
    }

    /// Serializes the resolved configuration (tolerance filled in).
    pub fn to_toml(&self) -> String {
        let mut resolved = self.clone();
        resolved.tol = Some(self.tolerance());
        toml::to_string(&resolved).unwrap_or_default()
    }

    pub fn tolerance(&self) -> f64 {
        self.tol.unwrap_or_else(|| default_tolerance(self.p))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.s > 0.0 && self.s < 1.0) {
            return Err(bad("s", format!("must lie in (0, 1), got {}", self.s)));
        }
        if !(self.p > 1.0 && self.p.is_finite()) {
            return Err(bad("p", format!("must be a finite number above 1, got {}", self.p)));
        }
        if self.k_list.is_empty() || self.k_list.contains(&0) {
            return Err(bad("k_list", "must be a nonempty list of positive integers"));
        }
        if self.k_list.iter().any(|&k| k > MAX_FINE_CELLS / 16) {
            return Err(bad("k_list", format!("entries above {} exceed the mesh limit", MAX_FINE_CELLS / 16)));
        }
        if !(2..=MAX_FINE_CELLS).contains(&self.n_cells_base) {
            return Err(bad("n_cells_base", format!("must lie in [2, {MAX_FINE_CELLS}]")));
        }
        if !(self.mean.is_finite() && self.amplitude.is_finite()) {
            return Err(bad("mean", "mean and amplitude must be finite"));
        }
        if !(self.mean - self.amplitude.abs() > 0.0) {
            return Err(bad("amplitude", "mean - |amplitude| must be positive"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(bad("alpha", format!("must be positive, got {}", self.alpha)));
        }
        if !(self.beta >= self.alpha && self.beta.is_finite()) {
            return Err(bad("beta", format!("must be finite and at least alpha, got {}", self.beta)));
        }
        if let Some(tol) = self.tol {
            if !(tol > 0.0 && tol < 1.0) {
                return Err(bad("tol", format!("must lie in (0, 1), got {tol}")));
            }
        }
        if !(2..=20).contains(&self.points_per_cell) {
            return Err(bad("points_per_cell", "must lie in [2, 20]"));
        }
        if !(3..=60).contains(&self.diagonal_levels) {
            return Err(bad("diagonal_levels", "must lie in [3, 60]"));
        }
        if !(self.grading_ratio > 0.0 && self.grading_ratio < 1.0) {
            return Err(bad("grading_ratio", "must lie in (0, 1)"));
        }
        if self.threads > 1024 {
            return Err(bad("threads", "must be at most 1024"));
        }
        if self.output_path.as_os_str().is_empty() {
            return Err(bad("output_path", "must not be empty"));
        }
        if self.loads.is_empty() {
            return Err(bad("loads", "at least one load is required"));
        }
        if let Some(l) = self.loads.iter().find(|l| !LOAD_NAMES.contains(&l.as_str())) {
            return Err(bad("loads", format!("unknown load `{l}`, expected one of {LOAD_NAMES:?}")));
        }
        Ok(())
    }

    pub fn params(&self) -> FracParams {
        FracParams::new(self.s, self.p).expect("validated")
    }

    pub fn rule(&self) -> QuadratureRule {
        QuadratureRule::new(self.points_per_cell, self.diagonal_levels, self.grading_ratio).expect("validated")
    }

    pub fn densities(&self) -> Vec<Density> {
        let all = standard_loads();
        self.loads
            .iter()
            .filter_map(|l| LOAD_NAMES.iter().position(|n| n == l).map(|i| all[i].clone()))
            .collect()
    }

    pub fn settings(&self) -> LabSettings {
        let mut s = LabSettings::new(self.params(), self.tolerance());
        s.rule = self.rule();
        s.loads = self.densities();
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_from_empty_document() {
        let c = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.tolerance(), 1e-10);
    }

    #[test]
    fn diagnostics_name_the_key() {
        let cases = [
            ("s = 1.2", "s"),
            ("p = 0.5", "p"),
            ("k_list = []", "k_list"),
            ("bogus = 3", "bogus"),
            ("experiment = \"h-nothing\"", "experiment"),
            ("n_cells_base = \"many\"", "n_cells_base"),
            ("amplitude = 2.5", "amplitude"),
            ("beta = 0.5", "beta"),
            ("loads = [\"one\", \"cubic\"]", "loads"),
            ("grading_ratio = 1.0", "grading_ratio"),
        ];
        for (text, key) in cases {
            let e = ExperimentConfig::from_toml(text).unwrap_err();
            assert_eq!(e.key, key, "{text}: {e}");
            assert!(e.to_string().contains(key));
        }
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = ExperimentConfig::from_toml("experiment = \"h-necessity\"\np = 3.0\nk_list = [1, 2]").unwrap();
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back.tol, Some(1e-8));
        assert_eq!(back.experiment, ExperimentKind::HNecessity);
        assert_eq!(back.k_list, vec![1, 2]);
    }
}
