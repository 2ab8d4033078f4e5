//! Run configuration read from JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use selbounds::decisions::UtilitySpec;
use selbounds::mu_learner::{SmootherConfig, SplitMode};
use selbounds::simulation::{DgpConfig, ExperimentConfig};
use selbounds::{BoundingSpec, LearnerConfig, PerformanceSpec};

use crate::error::{CliError, Result};

/// A performance measure given either as a bare kind name (`"mse"`) or a full object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Value", into = "PerformanceSpec")]
pub struct Estimand(pub PerformanceSpec);

impl TryFrom<Value> for Estimand {
    type Error = String;

    fn try_from(v: Value) -> std::result::Result<Self, String> {
        let v = match v {
            Value::String(kind) => serde_json::json!({ "kind": kind }),
            other => other,
        };
        let spec: PerformanceSpec = serde_json::from_value(v).map_err(|e| e.to_string())?;
        spec.validate().map_err(|e| e.to_string())?;
        Ok(Estimand(spec))
    }
}

impl From<Estimand> for PerformanceSpec {
    fn from(e: Estimand) -> Self {
        e.0
    }
}

/// Simulated data source: `"default"` or explicit generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Value", into = "DgpConfig")]
pub struct SimulateSpec(pub DgpConfig);

impl TryFrom<Value> for SimulateSpec {
    type Error = String;

    fn try_from(v: Value) -> std::result::Result<Self, String> {
        match v {
            Value::String(s) if s == "default" => Ok(SimulateSpec(DgpConfig::default())),
            Value::String(s) => Err(format!("expected \"default\" or an object, found \"{s}\"")),
            other => serde_json::from_value(other)
                .map(SimulateSpec)
                .map_err(|e| e.to_string()),
        }
    }
}

impl From<SimulateSpec> for DgpConfig {
    fn from(s: SimulateSpec) -> Self {
        s.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    /// Symmetric outcome-ratio bounds `[1/gamma, gamma]`.
    #[default]
    Gamma,
    /// Smoothing parameter of the proxy or instrument family.
    Alpha,
}

/// Which two intervals the breakdown search compares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "by", rename_all = "snake_case", deny_unknown_fields)]
pub enum Comparison {
    /// One measure in group 1 against group 0.
    Groups { estimand: Estimand },
    Estimands { first: Estimand, second: Estimand },
}

fn default_gamma_max() -> f64 {
    10.0
}
fn default_tol() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BreakdownConfig {
    pub compare: Comparison,
    #[serde(default = "default_gamma_max")]
    pub gamma_max: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub parameter: SweepParameter,
    #[serde(default)]
    pub grid: Vec<f64>,
    #[serde(default)]
    pub breakdown: Option<BreakdownConfig>,
}

fn default_folds() -> usize {
    5
}
fn default_eps() -> f64 {
    0.01
}
fn default_level() -> f64 {
    0.95
}
fn default_formats() -> Vec<Format> {
    vec![Format::Json, Format::Csv]
}
fn default_score_n() -> usize {
    5000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default)]
    pub simulate: Option<SimulateSpec>,
    #[serde(default)]
    pub estimand: Option<Estimand>,
    #[serde(default)]
    pub estimands: Vec<Estimand>,
    #[serde(default)]
    pub bounding: Option<BoundingSpec>,
    #[serde(default)]
    pub learner: LearnerConfig,
    #[serde(default)]
    pub smoother: SmootherConfig,
    #[serde(default)]
    pub split: SplitMode,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_eps")]
    pub eps_clip: f64,
    #[serde(default = "default_level")]
    pub level: f64,
    /// Also report group disparities.
    #[serde(default)]
    pub disparity: bool,
    /// Bootstrap resamples for class-conditional standard errors; 0 disables.
    #[serde(default)]
    pub bootstrap_reps: usize,
    /// Threshold grid for ROC bands.
    #[serde(default)]
    pub roc_thresholds: Vec<f64>,
    /// Training size for the score fitted on simulated data.
    #[serde(default = "default_score_n")]
    pub score_train_n: usize,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub utilities: Option<UtilitySpec>,
    /// Serialized bound functions for `decide`.
    #[serde(default)]
    pub bounds_model: Option<PathBuf>,
    /// Replication study for `simulate`; built from the other fields when absent.
    #[serde(default)]
    pub experiment: Option<ExperimentConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

/// Parses a configuration, reporting the path of the first offending field.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config {
            path,
            message: e.into_inner().to_string(),
        }
    })
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_config(&text)
}

impl RunConfig {
    /// All requested measures, `estimand` first.
    pub fn all_estimands(&self) -> Vec<PerformanceSpec> {
        self.estimand
            .iter()
            .chain(&self.estimands)
            .map(|e| e.0)
            .collect()
    }

    /// Checks invariants that serde cannot express. `needs_data` is false for commands
    /// that do not read a dataset.
    pub fn validate(&self, needs_data: bool) -> Result<()> {
        let bad = |m: &str| Err(CliError::Invalid(m.into()));
        if needs_data && self.input.is_some() == self.simulate.is_some() {
            return bad("exactly one of `input` and `simulate` is required");
        }
        if self.folds < 2 {
            return bad("folds must be at least 2");
        }
        if !(self.eps_clip > 0.0 && self.eps_clip < 0.5) {
            return bad("eps_clip must lie in (0, 0.5)");
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad("level must lie in (0, 1)");
        }
        if self.formats.is_empty() {
            return bad("at least one output format is required");
        }
        if let Some(s) = &self.simulate {
            s.0.validate()?;
        }
        self.learner.validate()?;
        self.smoother.validate()?;
        Ok(())
    }

    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config() {
        let c = parse_config(
            r#"{"simulate": "default", "estimand": "mse",
                "bounding": {"family": "nonparametric", "gamma_lo": 0.6667, "gamma_hi": 1.5}}"#,
        )
        .unwrap();
        assert_eq!(c.all_estimands(), vec![PerformanceSpec::Mse]);
        assert_eq!(c.folds, 5);
        c.validate(true).unwrap();
    }

    #[test]
    fn unknown_family_lists_supported() {
        let e = parse_config(r#"{"bounding": {"family": "rosenbaum"}}"#).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("rosenbaum"), "{msg}");
        for f in ["unconfounded", "worst_case", "nonparametric", "proxy_simple", "iv_fixed"] {
            assert!(msg.contains(f), "{msg}");
        }
        assert!(matches!(e, CliError::Config { .. }));
    }

    #[test]
    fn field_path_in_errors() {
        let e = parse_config(r#"{"learner": {"family": "knn", "k": "many"}}"#).unwrap_err();
        assert!(e.to_string().contains("learner"), "{e}");
        let e = parse_config(r#"{"folds": 5, "colour": 1}"#).unwrap_err();
        assert!(e.to_string().contains("colour"), "{e}");
    }

    #[test]
    fn estimand_objects_and_names() {
        let c = parse_config(r#"{"estimands": ["generalized_tpr", {"kind": "precision", "tau": 0.3}]}"#)
            .unwrap();
        assert_eq!(
            c.all_estimands(),
            vec![PerformanceSpec::GeneralizedTpr, PerformanceSpec::Precision { tau: 0.3 }]
        );
        assert!(parse_config(r#"{"estimand": {"kind": "precision", "tau": 3}}"#).is_err());
    }

    #[test]
    fn exactly_one_source() {
        let c = RunConfig::default();
        assert!(c.validate(true).is_err());
        assert!(c.validate(false).is_ok());
    }
}
