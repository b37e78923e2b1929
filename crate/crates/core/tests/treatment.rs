mod common;

use common::{cases, expm_series};
use mrt_joint::ou::OuParams;
use mrt_joint::treatment::{analytic_drift_integral, mu_hazard, mu_latent, TreatmentAmplitudes, TreatmentSchedule};
use mrt_joint::Error;
use nalgebra::DMatrix;
use proptest::prelude::*;

#[test]
fn drift_integral_matches_gauss_legendre() {
    let c = cases::drift_comparison(200, 20240611);
    assert!(c.worst <= 1e-8, "max abs error {}", c.worst);
    assert!(c.overlapping > 20 && c.clipped > 20, "coverage: {} overlapping, {} clipped", c.overlapping, c.clipped);
}

#[test]
fn drift_integral_is_zero_outside_effects() {
    let params = OuParams::new(DMatrix::identity(2, 2), vec![0.2]).unwrap();
    let schedule = TreatmentSchedule::new(vec![1.0], 0.5, 0.5).unwrap();
    let before = analytic_drift_integral(&params, &schedule, &[1.0, 2.0], 0.0, 1.0).unwrap();
    let after = analytic_drift_integral(&params, &schedule, &[1.0, 2.0], 1.5, 3.0).unwrap();
    assert_eq!(before.amax(), 0.0);
    assert_eq!(after.amax(), 0.0);
    let empty = analytic_drift_integral(&params, &schedule, &[1.0, 2.0], 1.2, 1.2).unwrap();
    assert_eq!(empty.amax(), 0.0);
}

#[test]
fn drift_integral_is_additive_over_split_intervals() {
    // ∫ₛᵗ = e^{−θ(t−m)} ∫ₛᵐ + ∫ₘᵗ
    let theta = DMatrix::from_row_slice(2, 2, &[2.4, 1.2, 2.9, 3.6]);
    let params = OuParams::new(theta.clone(), vec![-0.5]).unwrap();
    let schedule = TreatmentSchedule::new(vec![0.2, 0.5, 1.1, 1.3], 0.5, 0.5).unwrap();
    let tau = [2.0, -1.0];
    let whole = analytic_drift_integral(&params, &schedule, &tau, 0.1, 1.9).unwrap();
    let left = analytic_drift_integral(&params, &schedule, &tau, 0.1, 0.9).unwrap();
    let right = analytic_drift_integral(&params, &schedule, &tau, 0.9, 1.9).unwrap();
    let joined = expm_series(&(-&theta * 1.0)) * left + right;
    assert!((whole - joined).amax() < 1e-12);
}

#[test]
fn drift_integral_rejects_reversed_interval() {
    let params = OuParams::new(DMatrix::identity(2, 2), vec![0.0]).unwrap();
    let schedule = TreatmentSchedule::new(vec![0.5], 0.5, 0.5).unwrap();
    assert!(matches!(
        analytic_drift_integral(&params, &schedule, &[1.0, 1.0], 2.0, 1.0),
        Err(Error::Ordering(_))
    ));
    assert!(analytic_drift_integral(&params, &schedule, &[1.0], 0.0, 1.0).is_err());
}

#[test]
fn schedule_rejects_bad_input() {
    assert!(matches!(TreatmentSchedule::new(vec![1.0, 1.0], 0.5, 0.5), Err(Error::Ordering(_))));
    assert!(matches!(TreatmentSchedule::new(vec![2.0, 1.0], 0.5, 0.5), Err(Error::Ordering(_))));
    assert!(TreatmentSchedule::new(vec![1.0], 0.0, 0.5).is_err());
    assert!(TreatmentSchedule::new(vec![f64::NAN], 0.5, 0.5).is_err());
}

#[test]
fn tent_heights() {
    let s = TreatmentSchedule::new(vec![1.0, 1.25], 0.5, 1.0).unwrap();
    assert_eq!(s.tent_sum(0.99, 0.5), 0.0);
    assert_eq!(s.tent_sum(1.0, 0.5), 1.0);
    assert!((s.tent_sum(1.25, 0.5) - 1.5).abs() < 1e-15);
    assert!((s.tent_sum(1.5, 0.5) - 0.5).abs() < 1e-15);
    assert_eq!(s.tent_sum(1.75, 0.5), 0.0);
    let mu = mu_latent(&s, &[2.0, -1.0], 1.25);
    assert!((mu[0] - 3.0).abs() < 1e-15 && (mu[1] + 1.5).abs() < 1e-15);
    let amps = TreatmentAmplitudes::single(vec![2.0, -1.0], -0.8);
    assert!((mu_hazard(&s, &amps, 1.5) - -0.8 * (0.5 + 0.75)).abs() < 1e-15);
}

#[test]
fn hazard_amplitude_switches_at_quit_time() {
    let amps = TreatmentAmplitudes { tau: vec![0.0], tau_tilde_pre: -1.0, tau_tilde_post: 0.5, quit_time: Some(3.0) };
    assert_eq!(amps.tau_tilde_at(2.999), -1.0);
    assert_eq!(amps.tau_tilde_at(3.0), 0.5);
}

proptest! {
    #[test]
    fn tent_sum_is_bounded_by_active_count(
        gaps in prop::collection::vec(0.01f64..2.0, 1..20), t in 0.0f64..20.0, delta in 0.05f64..2.0,
    ) {
        let times: Vec<f64> = gaps.iter().scan(0.0, |acc, g| { *acc += g; Some(*acc) }).collect();
        let s = TreatmentSchedule::new(times.clone(), delta, delta).unwrap();
        let v = s.tent_sum(t, delta);
        let active = times.iter().filter(|&&ta| ta <= t && t < ta + delta).count() as f64;
        prop_assert!(v >= 0.0 && v <= active + 1e-12);
    }
}
