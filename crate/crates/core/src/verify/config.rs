//! Experiment configuration, read from TOML or JSON.
//!
//! ```toml
//! epsilons = [0.1, 0.05, 0.02, 0.01]
//! n_paths = 10000
//! seed = 7
//!
//! [model]
//! name = "logistic_feller"
//!
//! [thresholds.w1_final]
//! value = 0.01
//! provenance = "calibrated"
//! note = "…"
//! ```
//!
//! Every field but `model` has a default; unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DiffusionModel, ModelSpec};

pub const DEFAULT_EPSILONS: [f64; 4] = [0.1, 0.05, 0.02, 0.01];
pub const DEFAULT_HITTING_EPSILONS: [f64; 1] = [0.1];
pub const DEFAULT_N_PATHS: usize = 10_000;
pub const DEFAULT_C: f64 = 0.75;
pub const DEFAULT_SEED: u64 = 20_240_601;
pub const DEFAULT_REFERENCE_SIZE: usize = 1_000_000;
pub const DEFAULT_BOOTSTRAP: usize = 200;

/// Where a verdict threshold comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Closed form, or a sampling-error rule such as `2·stderr`.
    Analytic,
    /// Frozen from an oracle run.
    Calibrated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Threshold {
    pub value: f64,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    #[serde(default = "default_n_paths")]
    pub n_paths: usize,
    /// Euler step; each experiment has its own default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    /// Stage split `t_c = c T^ε`.
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Start point where the experiment does not start at `ε`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<f64>,
    /// Time horizon of the fluid-limit comparison.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    /// Probe time of the linearization comparison.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_probe: Option<f64>,
    /// Noise levels of the hitting experiment; exits from a barrier beyond
    /// `x_c` become very slow as `ε` shrinks.
    #[serde(default = "default_hitting_epsilons")]
    pub hitting_epsilons: Vec<f64>,
    /// Upper barrier of the hitting experiment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
    /// Overshoot level as a multiple of `x_c`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<f64>,
    /// Size of the exact reference sample of the limit law.
    #[serde(default = "default_reference_size")]
    pub reference_size: usize,
    /// Bootstrap replicates for distance standard errors.
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
    #[serde(default)]
    pub thresholds: BTreeMap<String, Threshold>,
}

fn default_epsilons() -> Vec<f64> {
    DEFAULT_EPSILONS.to_vec()
}

fn default_hitting_epsilons() -> Vec<f64> {
    DEFAULT_HITTING_EPSILONS.to_vec()
}

fn default_n_paths() -> usize {
    DEFAULT_N_PATHS
}

fn default_c() -> f64 {
    DEFAULT_C
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

fn default_reference_size() -> usize {
    DEFAULT_REFERENCE_SIZE
}

fn default_bootstrap() -> usize {
    DEFAULT_BOOTSTRAP
}

impl ExperimentConfig {
    /// Defaults around a named built-in model.
    pub fn for_model(name: &str) -> Self {
        Self {
            model: ModelSpec::named(name),
            epsilons: default_epsilons(),
            n_paths: DEFAULT_N_PATHS,
            dt: None,
            c: DEFAULT_C,
            seed: DEFAULT_SEED,
            x0: None,
            horizon: None,
            t_probe: None,
            hitting_epsilons: default_hitting_epsilons(),
            upper: None,
            level: None,
            reference_size: DEFAULT_REFERENCE_SIZE,
            bootstrap: DEFAULT_BOOTSTRAP,
            thresholds: BTreeMap::new(),
        }
    }

    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilons.is_empty() {
            return Err(Error::bad("epsilons", "need at least one noise level"));
        }
        if let Some(&e) = self.epsilons.iter().chain(&self.hitting_epsilons).find(|&&e| !(e >= 0.0 && e < 1.0)) {
            return Err(Error::BadEpsilon(e));
        }
        if self.seed > i64::MAX as u64 {
            return Err(Error::bad("seed", "must be at most 2^63 - 1 to fit a TOML integer"));
        }
        if self.n_paths == 0 {
            return Err(Error::bad("n_paths", "must be at least 1"));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) {
                return Err(Error::bad("dt", "must be positive"));
            }
        }
        if self.reference_size == 0 {
            return Err(Error::bad("reference_size", "must be at least 1"));
        }
        if self.bootstrap < 2 {
            return Err(Error::bad("bootstrap", "need at least 2 replicates"));
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<DiffusionModel<f64>> {
        self.model.build()
    }

    pub fn threshold(&self, key: &str) -> Result<&Threshold> {
        self.thresholds
            .get(key)
            .ok_or_else(|| Error::bad(&format!("thresholds.{key}"), "missing; run the calibration first"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_defaults_and_round_trip() {
        let cfg = ExperimentConfig::parse("seed = 3\n[model]\nname = \"logistic_feller\"\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.epsilons, DEFAULT_EPSILONS.to_vec());
        assert_eq!(cfg.n_paths, DEFAULT_N_PATHS);
        let back = ExperimentConfig::parse(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::parse(&json).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ExperimentConfig::parse("bogus = 1\n[model]\nname = \"x\"\n").is_err());
        assert!(ExperimentConfig::parse("epsilons = [1.5]\n[model]\nname = \"logistic_feller\"\n").is_err());
        assert!(ExperimentConfig::parse("n_paths = 0\n[model]\nname = \"logistic_feller\"\n").is_err());
        let cfg = ExperimentConfig::for_model("logistic_feller");
        assert!(cfg.threshold("w1_final").is_err());
    }
}
