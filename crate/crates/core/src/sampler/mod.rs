//! Markov chain Monte Carlo over parameters and latent paths.
//!
//! Latent paths are sampled in whitened coordinates: for fixed ψ the
//! longitudinal data give a Gaussian p(η | Y, ψ), and η = m(ψ) + A(ψ) z
//! maps standard-normal z onto it. Elliptical slice sampling updates z
//! against the event likelihood; blocked adaptive random-walk Metropolis
//! updates ψ on an unconstrained scale with z held fixed.

mod engine;

use std::collections::BTreeMap;

use nalgebra::{Dyn, U2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::latent::SubjectGrid;
use crate::model::ModelConfig;
use crate::params::{ParamLayout, ParameterVector};
use crate::stats;
use crate::statespace::SubjectPlan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentMode {
    /// Latent paths are sampled jointly with the parameters.
    Sampled,
    /// Paths stay at their conditional mean given the longitudinal data.
    Frozen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    #[serde(default = "one")]
    pub chains: usize,
    #[serde(default = "d_iter")]
    pub iterations: usize,
    #[serde(default = "d_burn")]
    pub burn_in: usize,
    #[serde(default)]
    pub seed: u64,
    /// Keep latent draws at iterations n − 1, n − 1 − thin, … after burn-in.
    #[serde(default = "d_thin")]
    pub latent_thin: usize,
    #[serde(default = "yes")]
    pub store_latent: bool,
    /// Coordinate names held at their initial values.
    #[serde(default)]
    pub fixed: Vec<String>,
    #[serde(default = "d_mode")]
    pub latent: LatentMode,
    #[serde(default)]
    pub initial: Option<ParameterVector>,
    #[serde(default = "d_target")]
    pub target_accept: f64,
    /// Latent paths supplied as data, one grid per subject. Only hazard
    /// coordinates are updated and the longitudinal submodel is ignored.
    #[serde(skip)]
    pub known_latent: Option<Vec<SubjectGrid>>,
}

fn one() -> usize {
    1
}
fn d_iter() -> usize {
    2000
}
fn d_burn() -> usize {
    1000
}
fn d_thin() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn d_mode() -> LatentMode {
    LatentMode::Sampled
}
fn d_target() -> f64 {
    0.25
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            chains: 1,
            iterations: d_iter(),
            burn_in: d_burn(),
            seed: 0,
            latent_thin: d_thin(),
            store_latent: true,
            fixed: Vec::new(),
            latent: LatentMode::Sampled,
            initial: None,
            target_accept: d_target(),
            known_latent: None,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 || self.iterations == 0 || self.latent_thin == 0 {
            return Err(Error::Config("chains, iterations and latent_thin must be positive".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::Config("burn_in must be smaller than iterations".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Config("target_accept must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentDraw {
    pub iteration: usize,
    /// Row-major values per subject on that subject's grid.
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOutput {
    pub chain: usize,
    pub iterations: Vec<usize>,
    /// Natural-scale parameter values in layout order.
    pub draws: Vec<Vec<f64>>,
    pub log_posterior: Vec<f64>,
    /// Post-burn-in acceptance rate per block.
    pub acceptance: BTreeMap<String, f64>,
    pub latent: Vec<LatentDraw>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorArchive {
    pub model: ModelConfig,
    pub sampler: SamplerConfig,
    pub param_names: Vec<String>,
    pub subject_ids: Vec<String>,
    pub latent_times: Vec<Vec<f64>>,
    pub initial: ParameterVector,
    pub chains: Vec<ChainOutput>,
    pub rhat: BTreeMap<String, f64>,
}

impl PosteriorArchive {
    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(&self.model)
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.param_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::InvalidInput(format!("no parameter named {name}")))
    }

    /// All post-burn-in draws of one coordinate, chains concatenated.
    pub fn draws_of(&self, name: &str) -> Result<Vec<f64>> {
        let i = self.index_of(name)?;
        Ok(self.chains.iter().flat_map(|c| c.draws.iter().map(move |d| d[i])).collect())
    }

    pub fn median(&self, name: &str) -> Result<f64> {
        Ok(stats::median(&self.draws_of(name)?))
    }

    pub fn quantile(&self, name: &str, q: f64) -> Result<f64> {
        Ok(stats::quantile(&self.draws_of(name)?, q))
    }

    pub fn n_draws(&self) -> usize {
        self.chains.iter().map(|c| c.draws.len()).sum()
    }

    pub fn posterior_mean(&self) -> Result<ParameterVector> {
        let n = self.param_names.len();
        let total = self.n_draws();
        if total == 0 {
            return Err(Error::InvalidInput("archive holds no draws".into()));
        }
        let mut acc = vec![0.0; n];
        for c in &self.chains {
            for d in &c.draws {
                for (a, v) in acc.iter_mut().zip(d) {
                    *a += v;
                }
            }
        }
        acc.iter_mut().for_each(|a| *a /= total as f64);
        self.layout().from_flat(&acc)
    }

    pub fn draw(&self, chain: usize, index: usize) -> Result<ParameterVector> {
        self.layout().from_flat(&self.chains[chain].draws[index])
    }

    /// Draws having stored latent paths, as (chain, draw index, latent index).
    pub fn draws_with_latent(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for (ci, c) in self.chains.iter().enumerate() {
            for (li, l) in c.latent.iter().enumerate() {
                if let Some(di) = c.iterations.iter().position(|&it| it == l.iteration) {
                    out.push((ci, di, li));
                }
            }
        }
        out
    }
}

/// Runs the configured chains; initial values default to the two-stage scheme.
pub fn run_mcmc(data: &Dataset, model: &ModelConfig, config: &SamplerConfig) -> Result<PosteriorArchive> {
    model.validate()?;
    config.validate()?;
    data.validate()?;
    if data.k != model.k {
        return Err(Error::Config(format!("data have {} outcomes, model expects {}", data.k, model.k)));
    }
    if data.n_covariates() != model.hazard.as_ref().map_or(data.n_covariates(), |h| h.n_covariates) {
        return Err(Error::Config("covariate count differs between data and model".into()));
    }
    let layout = ParamLayout::new(model);
    for name in &config.fixed {
        if layout.index_of(name).is_none() {
            return Err(Error::Config(format!("cannot fix unknown coordinate {name}")));
        }
    }
    let initial = match &config.initial {
        Some(pv) => pv.clone(),
        None => crate::init::two_stage_init(data, model, config.seed)?,
    };
    layout.check(&initial)?;
    let plans: Vec<SubjectPlan> = match &config.known_latent {
        Some(grids) => {
            if grids.len() != data.subjects.len() {
                return Err(Error::InvalidInput("one known latent grid per subject required".into()));
            }
            data.subjects
                .iter()
                .zip(grids)
                .map(|(s, g)| SubjectPlan::on_times(model, s, g.times.clone()))
                .collect::<Result<_>>()?
        }
        None => data.subjects.iter().map(|s| SubjectPlan::build(model, s)).collect::<Result<_>>()?,
    };

    let chains: Vec<Result<ChainOutput>> = (0..config.chains)
        .into_par_iter()
        .map(|c| {
            if model.p == 2 {
                engine::run_chain(U2, model, &layout, &plans, config, &initial, c)
            } else {
                engine::run_chain(Dyn(model.p), model, &layout, &plans, config, &initial, c)
            }
        })
        .collect();
    let chains: Vec<ChainOutput> = chains.into_iter().collect::<Result<_>>()?;

    let mut rhat = BTreeMap::new();
    if chains.len() >= 2 {
        for (i, name) in layout.names().into_iter().enumerate() {
            let per: Vec<Vec<f64>> = chains.iter().map(|c| c.draws.iter().map(|d| d[i]).collect()).collect();
            if let Some(r) = stats::split_rhat(&per) {
                rhat.insert(name, r);
            }
        }
    }
    Ok(PosteriorArchive {
        model: model.clone(),
        sampler: SamplerConfig { known_latent: None, ..config.clone() },
        param_names: layout.names(),
        subject_ids: data.subjects.iter().map(|s| s.id.clone()).collect(),
        latent_times: plans.iter().map(|p| p.times.clone()).collect(),
        initial,
        chains,
        rhat,
    })
}
