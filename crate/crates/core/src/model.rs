//! Model structure: which submodels are present and how they are wired.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hazard::GFunction;
use crate::measurement::validate_pattern;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    /// Treatment shifts the mean of the latent process.
    Additive,
    /// Treatment enters the drift of the SDE.
    Drift,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Constant,
    LogNormalPrePost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HazardConfig {
    pub baseline: BaselineKind,
    #[serde(default)]
    pub event_history: Option<GFunction>,
    /// Splits the baseline and the hazard treatment amplitude at this time.
    #[serde(default)]
    pub quit_time: Option<f64>,
    #[serde(default)]
    pub n_covariates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub p: usize,
    pub k: usize,
    /// k rows of p flags marking free loadings.
    pub pattern: Vec<Vec<bool>>,
    pub mechanism: Mechanism,
    pub delta_a: f64,
    pub delta_b: f64,
    #[serde(default = "default_grid_width")]
    pub grid_width: f64,
    #[serde(default)]
    pub hazard: Option<HazardConfig>,
    /// Days per model time unit; 1 unless the data were rescaled.
    #[serde(default = "one")]
    pub days_per_unit: f64,
}

fn default_grid_width() -> f64 {
    0.5
}

fn one() -> f64 {
    1.0
}

impl ModelConfig {
    pub fn flat_pattern(&self) -> Vec<bool> {
        self.pattern.iter().flatten().copied().collect()
    }

    pub fn n_loadings(&self) -> usize {
        self.pattern.iter().flatten().filter(|&&b| b).count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::Config("p must be at least 1".into()));
        }
        if self.pattern.len() != self.k || self.pattern.iter().any(|r| r.len() != self.p) {
            return Err(Error::Config("pattern must be k rows of p flags".into()));
        }
        validate_pattern(self.k, self.p, &self.flat_pattern()).map_err(|e| Error::Config(e.to_string()))?;
        for (name, v) in [
            ("delta_a", self.delta_a),
            ("delta_b", self.delta_b),
            ("grid_width", self.grid_width),
            ("days_per_unit", self.days_per_unit),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if let Some(h) = &self.hazard {
            if h.baseline == BaselineKind::LogNormalPrePost && h.quit_time.is_none() {
                return Err(Error::Config("log-normal pre/post baseline needs quit_time".into()));
            }
            if let Some(q) = h.quit_time {
                if !q.is_finite() {
                    return Err(Error::Config("quit_time must be finite".into()));
                }
            }
        }
        Ok(())
    }

    /// Same structure without the event submodel.
    pub fn longitudinal_only(&self) -> ModelConfig {
        ModelConfig { hazard: None, ..self.clone() }
    }

    /// Two factors over four outcomes, two indicators each, as in the simulation study.
    pub fn two_factor_four_items(mechanism: Mechanism, hazard: Option<HazardConfig>) -> ModelConfig {
        ModelConfig {
            p: 2,
            k: 4,
            pattern: vec![vec![true, false], vec![true, false], vec![false, true], vec![false, true]],
            mechanism,
            delta_a: 0.5,
            delta_b: 0.5,
            grid_width: 0.5,
            hazard,
            days_per_unit: 1.0,
        }
    }
}
