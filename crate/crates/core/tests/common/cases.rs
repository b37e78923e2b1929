//! Reference checks shared by the unit suites and the acceptance run. Each
//! returns the measured quantities and leaves the verdict to the caller.

use mrt_joint::data::{Dataset, Observation, SubjectData};
use mrt_joint::hazard::{cumulative_hazard_midpoint, Baseline, EventHistoryTerm, GFunction, GapInterval, HazardSpec, NearestPath};
use mrt_joint::latent::{grid_times, SubjectGrid};
use mrt_joint::model::{BaselineKind, HazardConfig, Mechanism, ModelConfig};
use mrt_joint::ou::OuParams;
use mrt_joint::params::{BaselineParams, ParamLayout};
use mrt_joint::prior::{COEF_SD, SCALE_CAUCHY};
use mrt_joint::sampler::{run_mcmc, SamplerConfig};
use mrt_joint::treatment::{analytic_drift_integral, TreatmentAmplitudes, TreatmentSchedule};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{adaptive_simpson, expm_series, gauss_legendre, gl_integrate, ks_statistic, normal_cdf};

/// Quadrature of ∫ₛᵗ e^{−θ(t−u)} τ Σ_a tent_a(u) du, one rule per active treatment piece.
pub fn drift_oracle(theta: &DMatrix<f64>, tau: &[f64], times: &[f64], delta: f64, s: f64, t: f64) -> DVector<f64> {
    let nodes = gauss_legendre(64);
    let tau = DVector::from_column_slice(tau);
    let mut out = DVector::zeros(tau.len());
    for &ta in times {
        let (a, b) = (s.max(ta), t.min(ta + delta));
        if b <= a {
            continue;
        }
        for i in 0..tau.len() {
            out[i] += gl_integrate(
                |u| {
                    let f = expm_series(&(-theta * (t - u)));
                    (f * &tau)[i] * (1.0 - (u - ta) / delta)
                },
                a,
                b,
                &nodes,
            );
        }
    }
    out
}

pub type DriftCase = (DMatrix<f64>, Vec<f64>, Vec<f64>, f64, f64, f64);

pub fn random_drift_case(rng: &mut ChaCha8Rng) -> DriftCase {
    let theta = loop {
        let d0 = rng.random_range(0.3..8.0);
        let d1 = rng.random_range(0.3..8.0);
        let a = rng.random_range(-3.0..3.0);
        let b = rng.random_range(-3.0..3.0);
        // Stable with positive determinant.
        if d0 * d1 - a * b > 0.05 {
            break DMatrix::from_row_slice(2, 2, &[d0, a, b, d1]);
        }
    };
    let tau = vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
    let delta = rng.random_range(0.1..1.5);
    // Gaps shorter than δ make tents overlap.
    let mut times = Vec::new();
    let mut t = rng.random_range(0.0..0.5);
    while t < 5.0 {
        times.push(t);
        t += rng.random_range(0.02..1.2);
    }
    let s = rng.random_range(0.0..4.5);
    let e = s + rng.random_range(0.0..2.0);
    (theta, tau, times, delta, s, e)
}

pub struct DriftComparison {
    pub worst: f64,
    pub overlapping: usize,
    pub clipped: usize,
}

/// Closed-form drift integral against the quadrature oracle over `n` random cases.
pub fn drift_comparison(n: usize, seed: u64) -> DriftComparison {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = DriftComparison { worst: 0.0, overlapping: 0, clipped: 0 };
    for _ in 0..n {
        let (theta, tau, times, delta, s, t) = random_drift_case(&mut rng);
        let params = OuParams::new(theta.clone(), vec![0.0]).unwrap();
        let schedule = TreatmentSchedule::new(times.clone(), delta, delta).unwrap();
        let got = analytic_drift_integral(&params, &schedule, &tau, s, t).unwrap();
        let want = drift_oracle(&theta, &tau, &times, delta, s, t);
        out.worst = out.worst.max((got - want).amax());
        if times.windows(2).any(|w| w[1] - w[0] < delta && w[1] < t && w[0] + delta > s) {
            out.overlapping += 1;
        }
        if times.iter().any(|&ta| (ta < s && ta + delta > s) || (ta < t && ta + delta > t)) {
            out.clipped += 1;
        }
    }
    out
}

/// Midpoint-rule errors for a smooth hazard at widths 0.5, 0.25, 0.125, 0.0625.
pub fn midpoint_errors() -> Vec<f64> {
    // Smooth in time through the logistic event-history term.
    let spec = HazardSpec {
        baseline: Baseline::Constant { beta0: -0.5 },
        beta_latent: vec![0.3, -0.2],
        event_history: Some(EventHistoryTerm { beta3: 1.2, g: GFunction::LogisticK1_5 }),
        covariate_coefs: vec![],
    };
    let eta = [0.4, -0.3];
    let times = [0.0];
    let path = NearestPath { times: &times, values: &eta, p: 2 };
    let schedule = TreatmentSchedule::new(vec![], 0.5, 0.5).unwrap();
    let amps = TreatmentAmplitudes::single(vec![0.0, 0.0], 0.0);
    let gap = GapInterval { start: 0.3, end: 4.3, prev_event: Some(0.3), ends_in_event: false };
    let lin: f64 = -0.5 + 0.3 * 0.4 + 0.2 * 0.3;
    let f = |t: f64| (lin + 1.2 / (1.0 + (1.5 * (t - 0.3 - 2.0)).exp())).exp();
    let exact = adaptive_simpson(&f, 0.3, 4.3, 1e-14);
    let mut errs = Vec::new();
    let mut w = 0.5;
    for _ in 0..4 {
        let approx = cumulative_hazard_midpoint(&spec, &gap, w, &path, &schedule, &amps, None).unwrap();
        errs.push((approx - exact).abs());
        w /= 2.0;
    }
    errs
}

pub fn hazard_model() -> ModelConfig {
    let hazard = HazardConfig { baseline: BaselineKind::Constant, event_history: None, quit_time: None, n_covariates: 0 };
    ModelConfig::two_factor_four_items(Mechanism::Additive, Some(hazard))
}

fn thinned(x: &[f64], every: usize) -> Vec<f64> {
    x.iter().step_by(every).copied().collect()
}

/// KS distances between a data-free chain and the prior, per coordinate.
pub fn prior_recovery_ks() -> Vec<(String, f64)> {
    let model = hazard_model();
    let data = Dataset { k: 4, subjects: vec![] };
    let layout = ParamLayout::new(&model);
    let cfg = SamplerConfig {
        iterations: 210_000,
        burn_in: 10_000,
        seed: 4,
        initial: Some(layout.reference_point()),
        ..SamplerConfig::default()
    };
    let arch = run_mcmc(&data, &model, &cfg).unwrap();
    let mut out = Vec::new();
    for name in ["tau[1]", "tau[2]", "beta0", "beta[1]", "beta[2]", "tau_tilde"] {
        let x = thinned(&arch.draws_of(name).unwrap(), 50);
        out.push((name.to_string(), ks_statistic(&x, |v| normal_cdf(v, 0.0, COEF_SD))));
    }
    for name in ["sigma_eps[1]", "sigma_u[3]"] {
        let x = thinned(&arch.draws_of(name).unwrap(), 50);
        out.push((name.to_string(), ks_statistic(&x, |v| 2.0 / std::f64::consts::PI * (v / SCALE_CAUCHY).atan())));
    }
    out
}

pub fn eta_fn(t: f64) -> [f64; 2] {
    [0.5 * t.sin(), 0.5 * (1.3 * t).cos()]
}

/// Subjects with hand-placed events and no longitudinal data.
pub fn event_data() -> Dataset {
    let subjects = (0..30)
        .map(|i| {
            let censor = 4.0 + (i % 3) as f64;
            let n = i % 4;
            let events = (1..=n).map(|r| censor * r as f64 / (n + 1) as f64 + 0.01 * i as f64).collect();
            SubjectData {
                id: format!("s{i}"),
                observations: vec![Observation { time: 0.0, y: vec![None; 4] }],
                treatments: vec![],
                events,
                censor_time: censor,
                at_risk_from: 0.0,
                covariates: vec![],
            }
        })
        .collect();
    Dataset { k: 4, subjects }
}

/// Posterior mean of β₀ by trapezoidal quadrature on a fine grid.
pub fn beta0_oracle(data: &Dataset, beta: [f64; 2], w: f64) -> f64 {
    let mut n = 0.0;
    let mut exposure = 0.0;
    for s in &data.subjects {
        n += s.events.len() as f64;
        let mut start = s.at_risk_from;
        for end in s.events.iter().copied().chain([s.censor_time]) {
            let mut lo = start;
            while lo < end - 1e-9 {
                let hi = (lo + w).min(end);
                let e = eta_fn(0.5 * (lo + hi));
                exposure += (beta[0] * e[0] + beta[1] * e[1]).exp() * (hi - lo);
                lo = hi;
            }
            start = end;
        }
    }
    // β·η at event times is constant in β₀ and drops out.
    let log_post = |b: f64| n * b - b.exp() * exposure - 0.5 * b * b / (COEF_SD * COEF_SD);
    let (lo, hi, m) = (-6.0, 4.0, 200_000);
    let h = (hi - lo) / m as f64;
    let peak = (0..=m).map(|k| log_post(lo + k as f64 * h)).fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut zb) = (0.0, 0.0);
    for k in 0..=m {
        let b = lo + k as f64 * h;
        let wt = if k == 0 || k == m { 0.5 } else { 1.0 };
        let d = wt * (log_post(b) - peak).exp();
        z += d;
        zb += d * b;
    }
    zb / z
}

pub struct Beta0Check {
    pub chain_mean: f64,
    pub oracle: f64,
    pub fixed_untouched: bool,
}

/// β₀ alone is sampled with the latent paths supplied as data.
pub fn beta0_posterior_check() -> Beta0Check {
    let model = hazard_model();
    let data = event_data();
    let layout = ParamLayout::new(&model);
    let beta = [0.8, -0.6];
    let known: Vec<SubjectGrid> = data
        .subjects
        .iter()
        .map(|s| {
            let times = grid_times(&model, s);
            let values = times.iter().flat_map(|&t| eta_fn(t)).collect();
            SubjectGrid { times, values }
        })
        .collect();
    let mut init = layout.reference_point();
    if let Some(h) = init.hazard.as_mut() {
        h.beta_latent = beta.to_vec();
        h.baseline = BaselineParams::Constant { beta0: 0.0 };
    }
    let cfg = SamplerConfig {
        iterations: 40_000,
        burn_in: 4_000,
        seed: 9,
        initial: Some(init),
        fixed: vec!["beta[1]".into(), "beta[2]".into(), "tau_tilde".into()],
        known_latent: Some(known),
        ..SamplerConfig::default()
    };
    let arch = run_mcmc(&data, &model, &cfg).unwrap();
    let draws = arch.draws_of("beta0").unwrap();
    let chain_mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let fixed_untouched = arch.draws_of("beta[1]").unwrap().iter().all(|&v| v == beta[0])
        && arch.draws_of("theta[1,1]").unwrap().iter().all(|&v| v == 1.0);
    Beta0Check { chain_mean, oracle: beta0_oracle(&data, beta, model.grid_width), fixed_untouched }
}
