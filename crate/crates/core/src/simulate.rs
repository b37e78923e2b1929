//! Synthetic micro-randomized-trial data from the two simulation settings.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Observation, SubjectData};
use crate::error::{Error, Result};
use crate::hazard::{g_logistic, EtaPath, EventHistory, GFunction, HazardSpec, NearestPath};
use crate::linalg;
use crate::measurement::{simulate_observation, LoadingsSpec, NoiseSpec};
use crate::model::{BaselineKind, HazardConfig, Mechanism, ModelConfig};
use crate::ou::{self, LatentState, OuParams};
use crate::params::{BaselineParams, HazardParams, ParameterVector};
use crate::treatment::{analytic_drift_integral, mu_latent, TreatmentAmplitudes, TreatmentSchedule};

/// Expected mean number of events per cell above which the grid is too coarse.
pub const MAX_CELL_MASS: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HazardForm {
    /// Constant baseline with latent predictors.
    Model1,
    /// Constant baseline, latent predictors and the event-history term.
    Model2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "d_subjects")]
    pub n_subjects: usize,
    #[serde(default = "d_follow_up")]
    pub follow_up_days: f64,
    #[serde(default = "d_obs")]
    pub obs_per_day: usize,
    #[serde(default = "d_trt")]
    pub trt_per_day: usize,
    #[serde(default = "d_half")]
    pub delta_a: f64,
    #[serde(default = "d_half")]
    pub delta_b: f64,
    pub setting: u8,
    pub tx_mechanism: Mechanism,
    pub hazard_form: HazardForm,
    #[serde(default = "d_fine")]
    pub fine_grid_width: f64,
    /// Midpoint grid width recorded in the model config used for fitting.
    #[serde(default = "d_half")]
    pub hazard_grid_width: f64,
    #[serde(default)]
    pub seed: u64,
}

fn d_subjects() -> usize {
    100
}
fn d_follow_up() -> f64 {
    14.0
}
fn d_obs() -> usize {
    4
}
fn d_trt() -> usize {
    1
}
fn d_half() -> f64 {
    0.5
}
fn d_fine() -> f64 {
    0.01
}

impl SimConfig {
    pub fn new(setting: u8, tx_mechanism: Mechanism, hazard_form: HazardForm, seed: u64) -> SimConfig {
        SimConfig {
            n_subjects: d_subjects(),
            follow_up_days: d_follow_up(),
            obs_per_day: d_obs(),
            trt_per_day: d_trt(),
            delta_a: d_half(),
            delta_b: d_half(),
            setting,
            tx_mechanism,
            hazard_form,
            fine_grid_width: d_fine(),
            hazard_grid_width: d_half(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.setting, 1 | 2) {
            return Err(Error::Config(format!("setting must be 1 or 2, got {}", self.setting)));
        }
        if self.n_subjects == 0 || self.obs_per_day == 0 {
            return Err(Error::Config("subject and observation counts must be positive".into()));
        }
        for (name, v) in [
            ("follow_up_days", self.follow_up_days),
            ("delta_a", self.delta_a),
            ("delta_b", self.delta_b),
            ("fine_grid_width", self.fine_grid_width),
            ("hazard_grid_width", self.hazard_grid_width),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        let hazard = HazardConfig {
            baseline: BaselineKind::Constant,
            event_history: match self.hazard_form {
                HazardForm::Model1 => None,
                HazardForm::Model2 => Some(setting_g(self.setting)),
            },
            quit_time: None,
            n_covariates: 0,
        };
        let mut m = ModelConfig::two_factor_four_items(self.tx_mechanism, Some(hazard));
        m.delta_a = self.delta_a;
        m.delta_b = self.delta_b;
        m.grid_width = self.hazard_grid_width;
        m
    }
}

pub fn setting_g(setting: u8) -> GFunction {
    if setting == 1 {
        GFunction::LogisticK4
    } else {
        GFunction::LogisticK1_5
    }
}

/// Mean-reversion matrix and volatility of each setting.
pub fn setting_dynamics(setting: u8) -> (DMatrix<f64>, DMatrix<f64>) {
    match setting {
        1 => (
            DMatrix::from_row_slice(2, 2, &[2.4, 1.2, 2.9, 3.6]),
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.78, 1.80])),
        ),
        _ => (
            DMatrix::from_row_slice(2, 2, &[10.2, 5.1, 4.9, 10.0]),
            DMatrix::from_diagonal(&DVector::from_vec(vec![3.92, 3.89])),
        ),
    }
}

/// Stationary correlation implied by a setting's θ and σ.
pub fn setting_rho(setting: u8) -> Result<f64> {
    let (theta, sigma) = setting_dynamics(setting);
    let v = ou::stationary_cov(&theta, &sigma)?;
    Ok(v[(0, 1)] / (v[(0, 0)] * v[(1, 1)]).sqrt())
}

/// True parameter values for a setting and hazard form.
pub fn true_parameters(setting: u8, hazard_form: HazardForm) -> Result<ParameterVector> {
    let (theta, _) = setting_dynamics(setting);
    let rho = setting_rho(setting)?;
    let (loadings, su2, se2) = if setting == 1 {
        (vec![0.9, 0.5, 1.0, 0.8], [0.16, 0.25, 0.64, 1.00], [0.04, 0.36, 0.09, 0.49])
    } else {
        (vec![0.4, 0.25, 0.5, 0.6], [0.16, 0.16, 0.25, 0.16], [0.04, 0.01, 0.09, 0.04])
    };
    let (beta0, beta3) = match hazard_form {
        HazardForm::Model1 => (-1.8, None),
        HazardForm::Model2 => (-1.5, Some(0.4)),
    };
    Ok(ParameterVector {
        theta: theta.transpose().as_slice().to_vec(),
        rho: vec![rho],
        loadings,
        sigma_lambda: 1.0,
        sigma_u: su2.iter().map(|v: &f64| v.sqrt()).collect(),
        sigma_eps: se2.iter().map(|v: &f64| v.sqrt()).collect(),
        tau: vec![2.0, -1.0],
        hazard: Some(HazardParams {
            baseline: BaselineParams::Constant { beta0 },
            beta_latent: vec![-0.5, 0.5],
            beta3,
            gamma: vec![],
            tau_tilde_pre: -0.8,
            tau_tilde_post: None,
        }),
    })
}

/// Exact sequential draw of the latent path on `grid` (grid[0] = 0).
pub fn simulate_latent_path<R: Rng + ?Sized>(
    params: &OuParams,
    schedule: &TreatmentSchedule,
    tau: &[f64],
    mechanism: Mechanism,
    grid: &[f64],
    rng: &mut R,
) -> Result<Vec<LatentState>> {
    if grid.first() != Some(&0.0) {
        return Err(Error::InvalidInput("latent grid must start at 0".into()));
    }
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Ordering("latent grid must be sorted".into()));
    }
    let p = params.p();
    let mut draw = |mean: DVector<f64>, cov: &DMatrix<f64>| -> Result<DVector<f64>> {
        let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        if cov.iter().all(|v| *v == 0.0) {
            return Ok(mean);
        }
        let l = linalg::chol_jitter(cov)?.unpack();
        Ok(mean + l * z)
    };
    let mut out = Vec::with_capacity(grid.len());
    let mean0 = match mechanism {
        Mechanism::Additive => mu_latent(schedule, tau, 0.0),
        Mechanism::Drift => DVector::zeros(p),
    };
    out.push(LatentState { time: 0.0, value: draw(mean0, params.v())? });
    let mut mu_prev = mu_latent(schedule, tau, 0.0);
    for w in grid.windows(2) {
        let (s, t) = (w[0], w[1]);
        let from = out.last().unwrap();
        let g = match mechanism {
            Mechanism::Additive => {
                let mu_t = mu_latent(schedule, tau, t);
                let g = ou::cond_dist_additive(params, from, t, &mu_prev, &mu_t)?;
                mu_prev = mu_t;
                g
            }
            Mechanism::Drift => {
                let di = analytic_drift_integral(params, schedule, tau, s, t)?;
                ou::cond_dist_drift(params, from, t, &di)?
            }
        };
        let value = draw(g.mean, &g.cov)?;
        out.push(LatentState { time: t, value });
    }
    Ok(out)
}

/// Cell-wise Poisson event generation with a clock-reset hazard.
///
/// `log_h(mid, gap, since_prev)` returns the log hazard at a cell midpoint.
pub(crate) fn generate_cellwise<R: Rng + ?Sized>(
    cells: &[(f64, f64)],
    origin: f64,
    mut prev_event: Option<f64>,
    mut log_h: impl FnMut(f64, f64, Option<f64>) -> Result<f64>,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut events = Vec::new();
    for &(lo, hi) in cells {
        let mid = 0.5 * (lo + hi);
        let start = prev_event.unwrap_or(origin);
        let lh = log_h(mid, (mid - start).max(0.0), prev_event.map(|p| mid - p))?;
        let mass = lh.exp() * (hi - lo);
        if !mass.is_finite() || mass > MAX_CELL_MASS {
            return Err(Error::Instability(format!(
                "expected {mass:.3} events in cell [{lo}, {hi}]; use a finer grid or check the parameters"
            )));
        }
        if mass <= 0.0 {
            continue;
        }
        let count = Poisson::new(mass).map_err(|e| Error::Numerical(e.to_string()))?.sample(rng) as usize;
        if count == 0 {
            continue;
        }
        let mut times: Vec<f64> = (0..count).map(|_| rng.random_range(lo..hi)).collect();
        times.sort_by(|a, b| a.total_cmp(b));
        let mut last = events.last().copied().unwrap_or(f64::NEG_INFINITY);
        for t in times {
            // Exact ties carry probability zero; keep the sequence strictly increasing.
            if t > last {
                events.push(t);
                last = t;
            }
        }
        prev_event = Some(last);
    }
    Ok(events)
}

/// Uniform cells of width `w` on [start, end], the last one truncated.
pub fn uniform_cells(start: f64, end: f64, w: f64) -> Vec<(f64, f64)> {
    crate::hazard::gap_cells(start, end, w)
}

/// Events on [0, follow_up] from a path stored at fine resolution.
#[allow(clippy::too_many_arguments)]
pub fn simulate_events<R: Rng + ?Sized>(
    spec: &HazardSpec,
    eta_path: &dyn EtaPath,
    schedule: &TreatmentSchedule,
    amps: &TreatmentAmplitudes,
    follow_up: f64,
    fine_grid_width: f64,
    x: Option<&[f64]>,
    rng: &mut R,
) -> Result<EventHistory> {
    let cells = uniform_cells(0.0, follow_up, fine_grid_width);
    let gx: f64 = match x {
        Some(x) => spec.covariate_coefs.iter().zip(x).map(|(g, v)| g * v).sum(),
        None => 0.0,
    };
    let events = generate_cellwise(
        &cells,
        0.0,
        None,
        |t, gap, since| {
            let eta = eta_path.eta_at(t)?;
            let mut v = spec.baseline.log_h0(t, gap);
            v += spec.beta_latent.iter().zip(eta).map(|(b, e)| b * e).sum::<f64>();
            if let (Some(term), Some(d)) = (spec.event_history, since) {
                v += term.beta3 * g_logistic(term.g, d);
            }
            v += amps.tau_tilde_at(t) * schedule.tent_sum(t, schedule.delta_b());
            Ok(v + gx)
        },
        rng,
    )?;
    EventHistory::new(events, follow_up, 0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSubjectTruth {
    /// Fine-grid times and row-major latent values.
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub intercepts: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimDataset {
    pub config: SimConfig,
    pub model: ModelConfig,
    pub truth: ParameterVector,
    pub data: Dataset,
    pub latent: Vec<SimSubjectTruth>,
}

/// Generates one complete dataset; deterministic in the seed and independent of thread count.
pub fn simulate_dataset(config: &SimConfig) -> Result<SimDataset> {
    config.validate()?;
    let model = config.model_config();
    let truth = true_parameters(config.setting, config.hazard_form)?;
    let ou_params = truth.ou()?;
    let loadings = truth.loadings_spec(&model)?;
    let noise = truth.noise();
    let spec = truth.hazard_spec(&model)?.expect("simulation model has a hazard");
    let amps = truth.amplitudes(&model);
    let results: Vec<Result<(SubjectData, SimSubjectTruth)>> = (0..config.n_subjects)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(i as u64 + 1);
            simulate_subject(config, &model, &ou_params, &loadings, &noise, &spec, &amps, i, &mut rng)
        })
        .collect();
    let mut subjects = Vec::with_capacity(config.n_subjects);
    let mut latent = Vec::with_capacity(config.n_subjects);
    for r in results {
        let (s, t) = r?;
        subjects.push(s);
        latent.push(t);
    }
    Ok(SimDataset { config: config.clone(), model, truth, data: Dataset { k: 4, subjects }, latent })
}

fn sorted_uniform_per_day<R: Rng + ?Sized>(days: f64, per_day: usize, rng: &mut R) -> Vec<f64> {
    let mut out = Vec::new();
    let mut day = 0.0;
    while day < days {
        let end = (day + 1.0).min(days);
        let mut v: Vec<f64> = (0..per_day).map(|_| rng.random_range(day..end)).collect();
        v.sort_by(|a, b| a.total_cmp(b));
        out.extend(v);
        day += 1.0;
    }
    out.dedup();
    out
}

#[allow(clippy::too_many_arguments)]
fn simulate_subject(
    config: &SimConfig,
    model: &ModelConfig,
    ou_params: &OuParams,
    loadings: &LoadingsSpec,
    noise: &NoiseSpec,
    spec: &HazardSpec,
    amps: &TreatmentAmplitudes,
    index: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(SubjectData, SimSubjectTruth)> {
    let follow = config.follow_up_days;
    let treatments = sorted_uniform_per_day(follow, config.trt_per_day, rng);
    let obs_times = sorted_uniform_per_day(follow, config.obs_per_day, rng);
    let schedule = TreatmentSchedule::new(treatments.clone(), model.delta_a, model.delta_b)?;

    let n_fine = (follow / config.fine_grid_width).round() as usize;
    let mut grid: Vec<f64> = (0..=n_fine).map(|k| k as f64 * config.fine_grid_width).collect();
    grid.retain(|&t| t <= follow);
    grid.extend(&obs_times);
    grid.sort_by(|a, b| a.total_cmp(b));
    grid.dedup();
    let path = simulate_latent_path(ou_params, &schedule, &amps.tau, model.mechanism, &grid, rng)?;
    let values: Vec<f64> = path.iter().flat_map(|s| s.value.iter().copied()).collect();

    let u: Vec<f64> = noise
        .sigma_u2
        .iter()
        .map(|v| v.sqrt() * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut observations = Vec::with_capacity(obs_times.len());
    let mut gi = 0;
    for &t in &obs_times {
        while grid[gi] < t {
            gi += 1;
        }
        let eta = &values[gi * 2..gi * 2 + 2];
        let y = simulate_observation(loadings, noise, eta, &u, rng);
        observations.push(Observation { time: t, y: y.iter().map(|v| Some(*v)).collect() });
    }

    let path_ref = NearestPath { times: &grid, values: &values, p: 2 };
    let history = simulate_events(spec, &path_ref, &schedule, amps, follow, config.fine_grid_width, None, rng)?;
    let subject = SubjectData {
        id: (index + 1).to_string(),
        observations,
        treatments,
        events: history.event_times().to_vec(),
        censor_time: follow,
        at_risk_from: 0.0,
        covariates: vec![],
    };
    Ok((subject, SimSubjectTruth { times: grid, values, intercepts: u }))
}
