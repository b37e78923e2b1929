//! Recurrent-event hazard with clock-reset baselines.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{normal_logpdf, std_normal_logcdf};
use crate::treatment::{TreatmentAmplitudes, TreatmentSchedule};

/// Lower clamp for the gap time under a log-normal baseline.
pub const MIN_GAP: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GFunction {
    #[serde(rename = "logistic_k4")]
    LogisticK4,
    #[serde(rename = "logistic_k1_5")]
    LogisticK1_5,
}

impl GFunction {
    pub fn kappa(self) -> f64 {
        match self {
            GFunction::LogisticK4 => 4.0,
            GFunction::LogisticK1_5 => 1.5,
        }
    }
}

/// 1 / (1 + exp{κ(x − 2)}).
pub fn g_logistic(variant: GFunction, x: f64) -> f64 {
    1.0 / (1.0 + (variant.kappa() * (x - 2.0)).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Baseline {
    Constant {
        beta0: f64,
    },
    LogNormalPrePost {
        mu0_pre: f64,
        sigma0_pre: f64,
        mu0_post: f64,
        sigma0_post: f64,
        quit_time: f64,
    },
}

impl Baseline {
    /// log h₀ at study time `t` with clock-reset gap `gap`.
    pub fn log_h0(&self, t: f64, gap: f64) -> f64 {
        match *self {
            Baseline::Constant { beta0 } => beta0,
            Baseline::LogNormalPrePost { mu0_pre, sigma0_pre, mu0_post, sigma0_post, quit_time } => {
                let (mu, sd) = if t < quit_time { (mu0_pre, sigma0_pre) } else { (mu0_post, sigma0_post) };
                log_lognormal_hazard(gap, mu, sd)
            }
        }
    }
}

pub(crate) fn log_lognormal_hazard(gap: f64, mu: f64, sd: f64) -> f64 {
    let tp = gap.max(MIN_GAP);
    let lt = tp.ln();
    normal_logpdf(lt, mu, sd) - lt - std_normal_logcdf((mu - lt) / sd)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventHistoryTerm {
    pub beta3: f64,
    pub g: GFunction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardSpec {
    pub baseline: Baseline,
    pub beta_latent: Vec<f64>,
    pub event_history: Option<EventHistoryTerm>,
    #[serde(default)]
    pub covariate_coefs: Vec<f64>,
}

impl HazardSpec {
    pub fn validate(&self) -> Result<()> {
        if let Baseline::LogNormalPrePost { sigma0_pre, sigma0_post, .. } = self.baseline {
            if !(sigma0_pre > 0.0 && sigma0_post > 0.0) {
                return Err(Error::InvalidParameter("log-normal baseline scales must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventHistory {
    event_times: Vec<f64>,
    censor_time: f64,
    at_risk_from: f64,
}

/// One inter-event gap; `prev_event` is `None` before the first event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapInterval {
    pub start: f64,
    pub end: f64,
    pub prev_event: Option<f64>,
    pub ends_in_event: bool,
}

impl EventHistory {
    pub fn new(event_times: Vec<f64>, censor_time: f64, at_risk_from: f64) -> Result<Self> {
        if !(censor_time.is_finite() && at_risk_from.is_finite() && censor_time >= at_risk_from) {
            return Err(Error::InvalidInput("censor time must follow at-risk start".into()));
        }
        if event_times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Ordering("event times must be strictly increasing".into()));
        }
        if let (Some(&first), Some(&last)) = (event_times.first(), event_times.last()) {
            if first < at_risk_from || last > censor_time {
                return Err(Error::Ordering("event times must lie in the at-risk interval".into()));
            }
        }
        Ok(EventHistory { event_times, censor_time, at_risk_from })
    }

    pub fn event_times(&self) -> &[f64] {
        &self.event_times
    }

    pub fn censor_time(&self) -> f64 {
        self.censor_time
    }

    pub fn at_risk_from(&self) -> f64 {
        self.at_risk_from
    }

    /// The inter-event gaps, ending with the censored one.
    pub fn gaps(&self) -> Vec<GapInterval> {
        let mut out = Vec::with_capacity(self.event_times.len() + 1);
        let mut start = self.at_risk_from;
        let mut prev = None;
        for &t in &self.event_times {
            out.push(GapInterval { start, end: t, prev_event: prev, ends_in_event: true });
            start = t;
            prev = Some(t);
        }
        out.push(GapInterval { start, end: self.censor_time, prev_event: prev, ends_in_event: false });
        out
    }
}

/// Access to latent values by time.
pub trait EtaPath {
    fn p(&self) -> usize;
    fn eta_at(&self, t: f64) -> Result<&[f64]>;
}

/// Lookup that requires a stored value at the requested time.
#[derive(Debug, Clone, Copy)]
pub struct ExactPath<'a> {
    pub times: &'a [f64],
    /// Row-major values, `p` per time.
    pub values: &'a [f64],
    pub p: usize,
}

pub(crate) const TIME_TOL: f64 = 1e-9;

impl EtaPath for ExactPath<'_> {
    fn p(&self) -> usize {
        self.p
    }

    fn eta_at(&self, t: f64) -> Result<&[f64]> {
        let i = self.times.partition_point(|&x| x < t - TIME_TOL);
        if i < self.times.len() && (self.times[i] - t).abs() <= TIME_TOL {
            Ok(&self.values[i * self.p..(i + 1) * self.p])
        } else {
            Err(Error::IncompletePath(t))
        }
    }
}

/// Nearest stored value; ties resolve to the earlier time.
#[derive(Debug, Clone, Copy)]
pub struct NearestPath<'a> {
    pub times: &'a [f64],
    pub values: &'a [f64],
    pub p: usize,
}

impl NearestPath<'_> {
    pub fn index_of(&self, t: f64) -> Option<usize> {
        nearest_index(self.times, t)
    }
}

pub(crate) fn nearest_index(times: &[f64], t: f64) -> Option<usize> {
    if times.is_empty() {
        return None;
    }
    let i = times.partition_point(|&x| x < t);
    if i == 0 {
        return Some(0);
    }
    if i == times.len() {
        return Some(i - 1);
    }
    if t - times[i - 1] <= times[i] - t {
        Some(i - 1)
    } else {
        Some(i)
    }
}

impl EtaPath for NearestPath<'_> {
    fn p(&self) -> usize {
        self.p
    }

    fn eta_at(&self, t: f64) -> Result<&[f64]> {
        let i = self.index_of(t).ok_or(Error::IncompletePath(t))?;
        Ok(&self.values[i * self.p..(i + 1) * self.p])
    }
}

/// log h(t) = log h₀ + βᵀη + β₃ g(·) + treatment term + γᵀx.
pub fn log_hazard(
    spec: &HazardSpec,
    t: f64,
    gap_time: f64,
    eta_t: &[f64],
    trt_term: f64,
    time_since_prev_event: Option<f64>,
    x: Option<&[f64]>,
) -> Result<f64> {
    if !(gap_time >= 0.0) {
        return Err(Error::Ordering(format!("negative gap time {gap_time}")));
    }
    if eta_t.len() != spec.beta_latent.len() {
        return Err(Error::InvalidInput("latent dimension differs from beta".into()));
    }
    let mut v = spec.baseline.log_h0(t, gap_time);
    v += spec.beta_latent.iter().zip(eta_t).map(|(b, e)| b * e).sum::<f64>();
    if let (Some(term), Some(d)) = (spec.event_history, time_since_prev_event) {
        v += term.beta3 * g_logistic(term.g, d);
    }
    v += trt_term;
    if let Some(x) = x {
        if x.len() != spec.covariate_coefs.len() {
            return Err(Error::InvalidInput("covariate length differs from gamma".into()));
        }
        v += spec.covariate_coefs.iter().zip(x).map(|(g, xv)| g * xv).sum::<f64>();
    }
    Ok(v)
}

/// Midpoint cells of width `w` anchored at `start`, the last one truncated at `end`.
pub fn gap_cells(start: f64, end: f64, w: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut k = 0usize;
    loop {
        let lo = start + k as f64 * w;
        if lo >= end - 1e-9 {
            break;
        }
        let hi = (start + (k + 1) as f64 * w).min(end);
        out.push((lo, hi));
        k += 1;
    }
    out
}

fn check_width(w: f64) -> Result<()> {
    if !(w > 0.0 && w.is_finite()) {
        return Err(Error::InvalidInput("grid width must be positive".into()));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn log_hazard_at(
    spec: &HazardSpec,
    t: f64,
    gap: &GapInterval,
    eta_path: &dyn EtaPath,
    schedule: &TreatmentSchedule,
    amps: &TreatmentAmplitudes,
    x: Option<&[f64]>,
) -> Result<f64> {
    let eta = eta_path.eta_at(t)?;
    let trt = amps.tau_tilde_at(t) * schedule.tent_sum(t, schedule.delta_b());
    log_hazard(spec, t, t - gap.start, eta, trt, gap.prev_event.map(|p| t - p), x)
}

/// Midpoint-rule ∫ h over one gap.
pub fn cumulative_hazard_midpoint(
    spec: &HazardSpec,
    gap: &GapInterval,
    grid_width: f64,
    eta_path: &dyn EtaPath,
    schedule: &TreatmentSchedule,
    amps: &TreatmentAmplitudes,
    x: Option<&[f64]>,
) -> Result<f64> {
    check_width(grid_width)?;
    let mut acc = 0.0;
    for (lo, hi) in gap_cells(gap.start, gap.end, grid_width) {
        let mid = 0.5 * (lo + hi);
        acc += log_hazard_at(spec, mid, gap, eta_path, schedule, amps, x)?.exp() * (hi - lo);
    }
    Ok(acc)
}

/// Σ_r [δ_r log h(T_r) − H(T_{r−1}, T_r)] with a clock-reset baseline.
pub fn event_loglik(
    spec: &HazardSpec,
    history: &EventHistory,
    eta_path: &dyn EtaPath,
    schedule: &TreatmentSchedule,
    amps: &TreatmentAmplitudes,
    grid_width: f64,
    x: Option<&[f64]>,
) -> Result<f64> {
    let mut acc = 0.0;
    for gap in history.gaps() {
        if gap.ends_in_event {
            acc += log_hazard_at(spec, gap.end, &gap, eta_path, schedule, amps, x)?;
        }
        acc -= cumulative_hazard_midpoint(spec, &gap, grid_width, eta_path, schedule, amps, x)?;
    }
    Ok(acc)
}
