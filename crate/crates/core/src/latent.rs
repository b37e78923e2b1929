//! Latent-grid layout and path densities.

use nalgebra::Dyn;

use crate::data::{Dataset, SubjectData};
use crate::error::{Error, Result};
use crate::hazard::{gap_cells, ExactPath, TIME_TOL};
use crate::model::ModelConfig;
use crate::params::ParameterVector;
use crate::statespace::{Kernel, SubjectPlan};

/// Latent values for one subject, `p` per grid time, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectGrid {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid {
    pub p: usize,
    pub subjects: Vec<SubjectGrid>,
}

impl LatentGrid {
    pub fn path(&self, i: usize) -> ExactPath<'_> {
        let s = &self.subjects[i];
        ExactPath { times: &s.times, values: &s.values, p: self.p }
    }

    /// Zero-valued grid laid out for `data`.
    pub fn zeros(model: &ModelConfig, data: &Dataset) -> LatentGrid {
        let subjects = data
            .subjects
            .iter()
            .map(|s| {
                let times = grid_times(model, s);
                let values = vec![0.0; times.len() * model.p];
                SubjectGrid { times, values }
            })
            .collect();
        LatentGrid { p: model.p, subjects }
    }
}

/// Sorted union of 0, observation times, event times and hazard-cell midpoints.
pub fn grid_times(model: &ModelConfig, subject: &SubjectData) -> Vec<f64> {
    let mut t = vec![0.0];
    t.extend(subject.observations.iter().map(|o| o.time));
    if model.hazard.is_some() {
        t.extend(&subject.events);
        for (lo, hi, _) in hazard_cells(subject, model.grid_width) {
            t.push(0.5 * (lo + hi));
        }
    }
    t.sort_by(|a, b| a.total_cmp(b));
    t.dedup_by(|a, b| (*a - *b).abs() <= TIME_TOL);
    t
}

/// Every hazard cell with the index of the gap it belongs to.
pub(crate) fn hazard_cells(subject: &SubjectData, w: f64) -> Vec<(f64, f64, usize)> {
    let mut out = Vec::new();
    let mut start = subject.at_risk_from;
    let ends = subject.events.iter().copied().chain(std::iter::once(subject.censor_time));
    for (r, end) in ends.enumerate() {
        out.extend(gap_cells(start, end, w).into_iter().map(|(lo, hi)| (lo, hi, r)));
        start = end;
    }
    out
}

/// log p(η | ψ) of a stored path from the sequence of conditional Gaussians.
pub fn path_log_density(
    model: &ModelConfig,
    params: &ParameterVector,
    subject: &SubjectData,
    grid: &SubjectGrid,
) -> Result<f64> {
    if grid.times.is_empty() || grid.values.len() != grid.times.len() * model.p {
        return Err(Error::InvalidInput("latent grid shape mismatch".into()));
    }
    if grid.times[0] != 0.0 {
        return Err(Error::InvalidInput("latent grid must start at time 0".into()));
    }
    let kernel: Kernel<Dyn> = Kernel::new(model, params, Dyn(model.p))?;
    let plan = SubjectPlan::on_times(model, subject, grid.times.clone())?;
    kernel.path_log_density(&plan, &grid.values)
}
