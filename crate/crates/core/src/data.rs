//! In-memory study data shared by simulation, ingestion and fitting.

use crate::error::{Error, Result};
use crate::hazard::EventHistory;
use crate::treatment::TreatmentSchedule;

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub time: f64,
    /// One entry per outcome; `None` marks item nonresponse.
    pub y: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectData {
    pub id: String,
    pub observations: Vec<Observation>,
    pub treatments: Vec<f64>,
    pub events: Vec<f64>,
    pub censor_time: f64,
    pub at_risk_from: f64,
    pub covariates: Vec<f64>,
}

impl SubjectData {
    pub fn history(&self) -> Result<EventHistory> {
        EventHistory::new(self.events.clone(), self.censor_time, self.at_risk_from)
    }

    pub fn schedule(&self, delta_a: f64, delta_b: f64) -> Result<TreatmentSchedule> {
        TreatmentSchedule::new(self.treatments.clone(), delta_a, delta_b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Number of longitudinal outcomes.
    pub k: usize,
    pub subjects: Vec<SubjectData>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        let n_cov = self.subjects.first().map_or(0, |s| s.covariates.len());
        for s in &self.subjects {
            let bad = |msg: &str| Error::DataInconsistency(format!("subject {}: {msg}", s.id));
            if !seen.insert(s.id.as_str()) {
                return Err(bad("duplicate subject id"));
            }
            if !(s.at_risk_from >= 0.0 && s.censor_time >= s.at_risk_from && s.censor_time.is_finite()) {
                return Err(bad("censor time must follow a non-negative at-risk start"));
            }
            if s.covariates.len() != n_cov {
                return Err(bad("covariate count differs between subjects"));
            }
            for o in &s.observations {
                if o.y.len() != self.k {
                    return Err(bad("observation has the wrong number of outcomes"));
                }
                if !(o.time >= 0.0 && o.time <= s.censor_time) {
                    return Err(bad("observation outside [0, censor time]"));
                }
                if o.y.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(bad("non-finite outcome value"));
                }
            }
            if s.observations.windows(2).any(|w| w[1].time < w[0].time) {
                return Err(bad("observations are not time-sorted"));
            }
            if s.treatments.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
                return Err(bad("treatment time must be finite and non-negative"));
            }
            if s.treatments.windows(2).any(|w| w[1] <= w[0]) {
                return Err(bad("treatment times must be strictly increasing"));
            }
            s.history().map_err(|e| bad(&e.to_string()))?;
        }
        Ok(())
    }

    pub fn n_covariates(&self) -> usize {
        self.subjects.first().map_or(0, |s| s.covariates.len())
    }

    pub fn total_events(&self) -> usize {
        self.subjects.iter().map(|s| s.events.len()).sum()
    }

    /// Multiplies every time by `factor` (e.g. 1/10 maps a 10-day study onto [0, 1]).
    pub fn rescale_time(&self, factor: f64) -> Result<Dataset> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::InvalidInput("time scale factor must be positive".into()));
        }
        let mut out = self.clone();
        for s in &mut out.subjects {
            for o in &mut s.observations {
                o.time *= factor;
            }
            s.treatments.iter_mut().for_each(|t| *t *= factor);
            s.events.iter_mut().for_each(|t| *t *= factor);
            s.censor_time *= factor;
            s.at_risk_from *= factor;
        }
        Ok(out)
    }
}
