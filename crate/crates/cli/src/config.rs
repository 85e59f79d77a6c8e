//! Pipeline configuration. Precedence is flags > config file > defaults.
//!
//! Frequencies are given in MHz as ordinary frequencies and multiplied by
//! 2π on conversion; the pulse length is in microseconds.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use luders::channels::ComplexJson;
use luders::dynamics::{standard_rows, ExperimentParams, Uncertain, TWO_PI_MHZ};
use luders::numeric::C64;
use luders::tomography::{Objective, PreparationError, MIN_RESAMPLES};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Angular frequency back to MHz, rounded to the Hz so defaults print as typed.
fn to_mhz(omega: f64) -> f64 {
    (omega / TWO_PI_MHZ * 1e6).round() / 1e6
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamsConfig {
    pub gamma_mhz: f64,
    pub detuning_mhz: f64,
    pub detuning_sigma_mhz: f64,
    pub duration_us: f64,
    pub repump_phase: f64,
    pub shots: u64,
    pub seed: u64,
}

impl Default for ParamsConfig {
    fn default() -> Self {
        let p = ExperimentParams::default();
        Self {
            gamma_mhz: to_mhz(p.gamma),
            detuning_mhz: to_mhz(p.detuning.value),
            detuning_sigma_mhz: to_mhz(p.detuning.sigma),
            duration_us: p.duration * 1e6,
            repump_phase: p.repump_phase,
            shots: p.shots,
            seed: p.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RowConfig {
    pub name: String,
    pub rabi_mhz: f64,
    #[serde(default)]
    pub rabi_sigma_mhz: f64,
    /// Overrides the computed coherence factor of the model channel.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g0: Option<ComplexJson>,
    /// Counts to load instead of simulating.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operation {
    Dynamics,
    Simulate,
    Reconstruct,
    Compare,
    Tptest,
    Bootstrap,
}

/// Which `g₀` builds the model channel when a row does not inject one.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum G0Model {
    #[default]
    Adiabatic,
    Exact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub params: ParamsConfig,
    pub rows: Vec<RowConfig>,
    pub output_dir: PathBuf,
    pub operations: Vec<Operation>,
    pub g0_model: G0Model,
    pub objective: Objective,
    pub starts: usize,
    pub bootstrap_resamples: usize,
    pub mc_samples: usize,
    pub trajectory_samples: usize,
    pub preparation_error: PreparationError,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            params: ParamsConfig::default(),
            rows: standard_rows()
                .into_iter()
                .map(|r| RowConfig {
                    name: r.name,
                    rabi_mhz: to_mhz(r.rabi.value),
                    rabi_sigma_mhz: to_mhz(r.rabi.sigma),
                    g0: None,
                    dataset: None,
                })
                .collect(),
            output_dir: PathBuf::from("out"),
            operations: vec![Operation::Dynamics, Operation::Simulate, Operation::Reconstruct, Operation::Compare],
            g0_model: G0Model::default(),
            objective: Objective::default(),
            starts: 5,
            bootstrap_resamples: 200,
            mc_samples: 1000,
            trajectory_samples: 200,
            preparation_error: PreparationError::None,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub shots: Option<u64>,
    pub out: Option<PathBuf>,
    pub row: Option<String>,
    pub dataset: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads `path` (or starts from defaults) and applies `overrides`.
    /// Validation is left to the caller.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> CliResult<Self> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                Self::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => Self::default(),
        };
        config.apply(overrides)?;
        Ok(config)
    }

    pub fn apply(&mut self, overrides: &Overrides) -> CliResult<()> {
        if let Some(seed) = overrides.seed {
            self.params.seed = seed;
        }
        if let Some(shots) = overrides.shots {
            self.params.shots = shots;
        }
        if let Some(out) = &overrides.out {
            self.output_dir = out.clone();
        }
        if let Some(name) = &overrides.row {
            self.rows.retain(|r| &r.name == name);
            if self.rows.is_empty() {
                return Err(CliError::Config(format!("no row named `{name}`")));
            }
        }
        if let Some(path) = &overrides.dataset {
            if self.rows.len() != 1 {
                return Err(CliError::Config(format!(
                    "--dataset needs exactly one row, {} selected (use --row)",
                    self.rows.len()
                )));
            }
            self.rows[0].dataset = Some(path.clone());
        }
        Ok(())
    }

    pub fn validate(&self) -> CliResult<()> {
        let fail = |msg: String| Err(CliError::Config(msg));
        if self.operations.is_empty() {
            return fail("at least one operation must be requested".into());
        }
        if self.rows.is_empty() {
            return fail("no rows configured".into());
        }
        let mut names = HashSet::new();
        for row in &self.rows {
            if row.name.is_empty() || !row.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return fail(format!("row name `{}` must be non-empty and use [A-Za-z0-9_-]", row.name));
            }
            if !names.insert(&row.name) {
                return fail(format!("duplicate row `{}`", row.name));
            }
            if !(row.rabi_mhz.is_finite() && row.rabi_mhz >= 0.0) {
                return fail(format!("row {}: rabi_mhz must be finite and non-negative", row.name));
            }
            if let Some(g0) = row.g0 {
                let mag = C64::new(g0.re, g0.im).norm();
                if mag.is_nan() || mag > 1.0 + 1e-12 {
                    return fail(format!("row {}: |g0| = {mag} exceeds 1", row.name));
                }
            }
            if let Some(path) = &row.dataset {
                if !path.is_file() {
                    return fail(format!("row {}: dataset {} does not exist", row.name, path.display()));
                }
            }
            self.row_params(row).validate().map_err(|e| CliError::Config(format!("row {}: {e}", row.name)))?;
        }
        if self.params.shots == 0 {
            return fail("shots must be at least 1".into());
        }
        if self.starts == 0 {
            return fail("starts must be at least 1".into());
        }
        if self.operations.contains(&Operation::Bootstrap) && self.bootstrap_resamples < MIN_RESAMPLES {
            return fail(format!("bootstrap_resamples must be at least {MIN_RESAMPLES}"));
        }
        if self.operations.contains(&Operation::Dynamics) && self.mc_samples < 100 {
            return fail("mc_samples must be at least 100".into());
        }
        Ok(())
    }

    /// Physical parameters of `row` in SI units.
    pub fn row_params(&self, row: &RowConfig) -> ExperimentParams {
        let p = &self.params;
        ExperimentParams {
            rabi: Uncertain::new(row.rabi_mhz * TWO_PI_MHZ, row.rabi_sigma_mhz * TWO_PI_MHZ),
            gamma: p.gamma_mhz * TWO_PI_MHZ,
            detuning: Uncertain::new(p.detuning_mhz * TWO_PI_MHZ, p.detuning_sigma_mhz * TWO_PI_MHZ),
            duration: p.duration_us * 1e-6,
            repump_phase: p.repump_phase,
            shots: p.shots,
            seed: p.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_four_table_rows() {
        let c = PipelineConfig::default();
        let names: Vec<&str> = c.rows.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, ["a", "b", "c", "d"]);
        assert!((c.rows[3].rabi_mhz - 15.2).abs() < 1e-12);
        c.validate().unwrap();
    }

    #[test]
    fn frequencies_are_scaled_by_two_pi() {
        let c = PipelineConfig::default();
        let p = c.row_params(&c.rows[0]);
        assert!((p.rabi.value - 2.0 * std::f64::consts::PI * 1.3e6).abs() < 1e-3);
        assert!((p.gamma - 2.0 * std::f64::consts::PI * 21.65e6).abs() < 1e-3);
        assert_eq!(p.duration, 1e-6);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c = PipelineConfig::from_json(r#"{"params": {"duration_us": 2.0}, "operations": ["dynamics"]}"#).unwrap();
        assert_eq!(c.params.duration_us, 2.0);
        assert_eq!(c.params.gamma_mhz, ParamsConfig::default().gamma_mhz);
        assert_eq!(c.rows.len(), 4);
        assert_eq!(c.operations, [Operation::Dynamics]);
    }

    #[test]
    fn flags_override_file() {
        let mut c = PipelineConfig::from_json(r#"{"params": {"seed": 5, "shots": 10}}"#).unwrap();
        let o = Overrides { seed: Some(9), row: Some("b".into()), ..Default::default() };
        c.apply(&o).unwrap();
        assert_eq!(c.params.seed, 9);
        assert_eq!(c.params.shots, 10);
        assert_eq!(c.rows.len(), 1);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            r#"{"operations": []}"#,
            r#"{"rows": []}"#,
            r#"{"rows": [{"name": "x", "rabi_mhz": -1}]}"#,
            r#"{"rows": [{"name": "x", "rabi_mhz": 1}, {"name": "x", "rabi_mhz": 2}]}"#,
            r#"{"rows": [{"name": "../x", "rabi_mhz": 1}]}"#,
            r#"{"rows": [{"name": "x", "rabi_mhz": 1, "g0": {"re": 1.5, "im": 0}}]}"#,
            r#"{"rows": [{"name": "x", "rabi_mhz": 1, "dataset": "/nonexistent/counts.csv"}]}"#,
            r#"{"params": {"gamma_mhz": 0}}"#,
            r#"{"operations": ["bootstrap"], "bootstrap_resamples": 10}"#,
        ];
        for text in bad {
            let c = PipelineConfig::from_json(text).unwrap();
            assert!(matches!(c.validate(), Err(CliError::Config(_))), "{text}");
        }
        assert!(PipelineConfig::from_json(r#"{"unknown": 1}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"operations": ["plot"]}"#).is_err());
    }

    #[test]
    fn unknown_row_and_ambiguous_dataset_are_config_errors() {
        let mut c = PipelineConfig::default();
        assert!(c.clone().apply(&Overrides { row: Some("z".into()), ..Default::default() }).is_err());
        assert!(c.apply(&Overrides { dataset: Some("x.csv".into()), ..Default::default() }).is_err());
    }
}
