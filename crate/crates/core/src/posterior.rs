//! Joint log posterior over parameters and latent grid values.

use nalgebra::Dyn;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::hazard::event_loglik;
use crate::latent::LatentGrid;
use crate::model::ModelConfig;
use crate::params::{ParamLayout, ParameterVector};
use crate::prior::log_prior;
use crate::statespace::{Kernel, SubjectPlan};

/// Per-subject pieces of the log posterior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubjectTerms {
    pub event: f64,
    pub observations: f64,
    pub path: f64,
}

impl SubjectTerms {
    pub fn total(&self) -> f64 {
        self.event + self.observations + self.path
    }
}

/// Likelihood and path-density terms for every subject.
pub fn subject_terms(
    model: &ModelConfig,
    params: &ParameterVector,
    latent: &LatentGrid,
    data: &Dataset,
) -> Result<Vec<SubjectTerms>> {
    ParamLayout::new(model).check(params)?;
    if latent.subjects.len() != data.subjects.len() || latent.p != model.p {
        return Err(Error::InvalidInput("latent grid does not match the dataset".into()));
    }
    let kernel: Kernel<Dyn> = Kernel::new(model, params, Dyn(model.p))?;
    let spec = params.hazard_spec(model)?;
    let amps = params.amplitudes(model);
    let mut out = Vec::with_capacity(data.subjects.len());
    for (i, s) in data.subjects.iter().enumerate() {
        let grid = &latent.subjects[i];
        let plan = SubjectPlan::on_times(model, s, grid.times.clone())?;
        if grid.times.first() != Some(&0.0) || grid.values.len() != grid.times.len() * model.p {
            return Err(Error::InvalidInput(format!("latent grid for subject {} is malformed", s.id)));
        }
        let event = match &spec {
            Some(spec) => {
                let schedule = s.schedule(model.delta_a, model.delta_b)?;
                let x = (!s.covariates.is_empty()).then_some(s.covariates.as_slice());
                event_loglik(spec, &s.history()?, &latent.path(i), &schedule, &amps, model.grid_width, x)?
            }
            None => 0.0,
        };
        out.push(SubjectTerms {
            event,
            observations: kernel.obs_loglik(&plan, &grid.values),
            path: kernel.path_log_density(&plan, &grid.values)?,
        });
    }
    Ok(out)
}

/// log p(ψ) + Σ_i [event log-likelihood + observation log-likelihood + log p(η_i | ψ)].
pub fn log_posterior(model: &ModelConfig, params: &ParameterVector, latent: &LatentGrid, data: &Dataset) -> Result<f64> {
    let lp = log_prior(params);
    if lp == f64::NEG_INFINITY {
        return Ok(lp);
    }
    let terms = subject_terms(model, params, latent, data)?;
    Ok(lp + terms.iter().map(SubjectTerms::total).sum::<f64>())
}
