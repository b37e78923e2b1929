//! Tent-shaped treatment effects on the latent process and the hazard.

use nalgebra::allocator::Allocator;
use nalgebra::{DVector, DefaultAllocator, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, LatentDim, Mat, Vect};
use crate::ou::OuParams;

#[derive(Debug, Clone, PartialEq)]
pub struct TreatmentSchedule {
    times: Vec<f64>,
    delta_a: f64,
    delta_b: f64,
}

impl TreatmentSchedule {
    pub fn new(times: Vec<f64>, delta_a: f64, delta_b: f64) -> Result<Self> {
        for d in [delta_a, delta_b] {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::InvalidInput("effect durations must be positive and finite".into()));
            }
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidInput("non-finite treatment time".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Ordering("treatment times must be strictly increasing".into()));
        }
        Ok(TreatmentSchedule { times, delta_a, delta_b })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn delta_a(&self) -> f64 {
        self.delta_a
    }

    pub fn delta_b(&self) -> f64 {
        self.delta_b
    }

    /// Σ_a (1 − (t − t_a)/δ)_+ over treatments delivered at or before t.
    pub fn tent_sum(&self, t: f64, delta: f64) -> f64 {
        tent_sum(&self.times, delta, t)
    }
}

pub(crate) fn tent_sum(times: &[f64], delta: f64, t: f64) -> f64 {
    let end = times.partition_point(|&ta| ta <= t);
    let mut acc = 0.0;
    for &ta in times[..end].iter().rev() {
        let w = 1.0 - (t - ta) / delta;
        if w <= 0.0 {
            break;
        }
        acc += w;
    }
    acc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentAmplitudes {
    pub tau: Vec<f64>,
    pub tau_tilde_pre: f64,
    pub tau_tilde_post: f64,
    pub quit_time: Option<f64>,
}

impl TreatmentAmplitudes {
    pub fn single(tau: Vec<f64>, tau_tilde: f64) -> Self {
        TreatmentAmplitudes { tau, tau_tilde_pre: tau_tilde, tau_tilde_post: tau_tilde, quit_time: None }
    }

    pub fn tau_tilde_at(&self, t: f64) -> f64 {
        match self.quit_time {
            Some(q) if t >= q => self.tau_tilde_post,
            _ => self.tau_tilde_pre,
        }
    }
}

pub fn mu_latent(schedule: &TreatmentSchedule, tau: &[f64], t: f64) -> DVector<f64> {
    let s = schedule.tent_sum(t, schedule.delta_a);
    DVector::from_iterator(tau.len(), tau.iter().map(|x| x * s))
}

pub fn mu_hazard(schedule: &TreatmentSchedule, amps: &TreatmentAmplitudes, t: f64) -> f64 {
    amps.tau_tilde_at(t) * schedule.tent_sum(t, schedule.delta_b)
}

/// One treatment's active piece inside [s, t], stored relative to t.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct DriftSegment {
    /// t − a and t − b for the clipped bounds a < b.
    pub lag_a: f64,
    pub lag_b: f64,
    /// Tent heights at a and b.
    pub f_a: f64,
    pub f_b: f64,
}

pub(crate) fn drift_segments(times: &[f64], delta: f64, s: f64, t: f64) -> Vec<DriftSegment> {
    let mut out = Vec::new();
    let start = times.partition_point(|&ta| ta + delta <= s);
    for &ta in &times[start..] {
        if ta >= t {
            break;
        }
        let a = ta.max(s);
        let b = t.min(ta + delta);
        if b > a {
            out.push(DriftSegment {
                lag_a: t - a,
                lag_b: t - b,
                f_a: 1.0 - (a - ta) / delta,
                f_b: 1.0 - (b - ta) / delta,
            });
        }
    }
    out
}

/// Sum of the closed-form antiderivative differences over segments.
///
/// `w1 = θ⁻¹τ` and `w2 = θ⁻²τ/δ`.
pub(crate) fn drift_from_segments<D: LatentDim>(
    theta: &Mat<D>,
    w1: &Vect<D>,
    w2: &Vect<D>,
    segs: &[DriftSegment],
    out: &mut Vect<D>,
) where
    DefaultAllocator: Allocator<D, D> + Allocator<D>,
{
    out.fill(0.0);
    for seg in segs {
        let hb = w1 * seg.f_b + w2;
        let ha = w1 * seg.f_a + w2;
        if seg.lag_b == 0.0 {
            *out += hb;
        } else {
            *out += linalg::expm(&(theta * -seg.lag_b)) * hb;
        }
        *out -= linalg::expm(&(theta * -seg.lag_a)) * ha;
    }
}

/// Drift weights θ⁻¹τ and θ⁻²τ/δ.
pub(crate) fn drift_weights<D: LatentDim>(theta: &Mat<D>, tau: &Vect<D>, delta: f64) -> Result<(Vect<D>, Vect<D>)>
where
    DefaultAllocator: Allocator<D, D> + Allocator<D>,
{
    let inv = theta
        .clone()
        .try_inverse()
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::InvalidParameter("theta is singular".into()))?;
    let w1 = &inv * tau;
    let w2 = &inv * &w1 / delta;
    Ok((w1, w2))
}

/// ∫ₛᵗ e^{−θ(t−u)} μ(u) du in closed form, summed over every treatment overlapping [s, t].
pub fn analytic_drift_integral(
    params: &OuParams,
    schedule: &TreatmentSchedule,
    tau: &[f64],
    s: f64,
    t: f64,
) -> Result<DVector<f64>> {
    if !(t >= s) {
        return Err(Error::Ordering(format!("drift integral needs t >= s, got s = {s}, t = {t}")));
    }
    let p = params.p();
    if tau.len() != p {
        return Err(Error::InvalidInput("tau length differs from latent dimension".into()));
    }
    let theta = params.theta().clone();
    let tau = DVector::from_column_slice(tau);
    let (w1, w2) = drift_weights::<Dyn>(&theta, &tau, schedule.delta_a)?;
    let segs = drift_segments(schedule.times(), schedule.delta_a, s, t);
    let mut out = DVector::zeros(p);
    drift_from_segments::<Dyn>(&theta, &w1, &w2, &segs, &mut out);
    Ok(out)
}
