//! Multivariate Ornstein-Uhlenbeck latent process parameterized by the
//! mean-reversion matrix and a unit-diagonal stationary covariance.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, PartialEq)]
pub struct OuParams {
    theta: DMatrix<f64>,
    rho_offdiag: Vec<f64>,
    v: DMatrix<f64>,
}

impl OuParams {
    /// `rho_offdiag` lists the upper-triangle correlations row by row.
    pub fn new(theta: DMatrix<f64>, rho_offdiag: Vec<f64>) -> Result<Self> {
        let p = theta.nrows();
        if p == 0 || !theta.is_square() {
            return Err(Error::InvalidParameter("theta must be a non-empty square matrix".into()));
        }
        if rho_offdiag.len() != p * (p - 1) / 2 {
            return Err(Error::InvalidParameter(format!(
                "expected {} correlations, got {}",
                p * (p - 1) / 2,
                rho_offdiag.len()
            )));
        }
        if !linalg::is_stable(&theta) {
            return Err(Error::InvalidParameter(
                "theta must have eigenvalues with positive real part".into(),
            ));
        }
        if rho_offdiag.iter().any(|r| !(r.abs() < 1.0)) {
            return Err(Error::InvalidParameter("correlations must lie in (-1, 1)".into()));
        }
        let v = unit_cov(p, &rho_offdiag);
        if v.clone().cholesky().is_none() {
            return Err(Error::InvalidParameter("stationary matrix is not positive definite".into()));
        }
        Ok(OuParams { theta, rho_offdiag, v })
    }

    pub fn p(&self) -> usize {
        self.theta.nrows()
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn rho_offdiag(&self) -> &[f64] {
        &self.rho_offdiag
    }

    /// Stationary covariance: unit diagonal, off-diagonals from ρ.
    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    /// Transition matrix e^{−θΔ}.
    pub fn transition(&self, dt: f64) -> DMatrix<f64> {
        linalg::expm(&(-&self.theta * dt))
    }

    pub fn transition_cov(&self, dt: f64) -> DMatrix<f64> {
        if dt == 0.0 {
            return DMatrix::zeros(self.p(), self.p());
        }
        let f = self.transition(dt);
        let mut q = &self.v - &f * &self.v * f.transpose();
        linalg::symmetrize(&mut q);
        q
    }
}

pub(crate) fn unit_cov(p: usize, rho: &[f64]) -> DMatrix<f64> {
    let mut v = DMatrix::identity(p, p);
    let mut idx = 0;
    for i in 0..p {
        for j in (i + 1)..p {
            v[(i, j)] = rho[idx];
            v[(j, i)] = rho[idx];
            idx += 1;
        }
    }
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub time: f64,
    pub value: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl Gaussian {
    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        let chol = linalg::chol_jitter(&self.cov)?;
        let r = x - &self.mean;
        let w = chol.solve(&r);
        Ok(-0.5 * (r.len() as f64 * crate::stats::LN_2PI + linalg::ln_det_chol(&chol) + r.dot(&w)))
    }
}

/// Stationary covariance V solving θV + Vθᵀ = σσᵀ.
pub fn stationary_cov(theta: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let ss = sigma * sigma.transpose();
    linalg::solve_lyapunov(theta, &ss)
}

/// Volatility square root implied by θ and the unit-diagonal V.
pub fn derive_sigma(params: &OuParams) -> Result<DMatrix<f64>> {
    let ss = derive_sigma_sq(params);
    let tol = 1e-12 * ss.amax().max(1.0);
    linalg::psd_sqrt(&ss, tol)
        .ok_or_else(|| Error::ConstraintViolation("implied sigma sigma^T is not PSD".into()))
}

pub fn derive_sigma_sq(params: &OuParams) -> DMatrix<f64> {
    let ss = &params.theta * &params.v + &params.v * params.theta.transpose();
    (&ss + ss.transpose()) * 0.5
}

/// Whether σσᵀ = θV + Vθᵀ is positive semidefinite.
pub fn sigma_feasible(params: &OuParams) -> bool {
    let ss = derive_sigma_sq(params);
    if ss.nrows() == 2 {
        let tr = ss[(0, 0)] + ss[(1, 1)];
        let det = ss[(0, 0)] * ss[(1, 1)] - ss[(0, 1)] * ss[(1, 0)];
        return tr >= 0.0 && det >= -1e-12 * tr * tr && ss[(0, 0)] >= 0.0 && ss[(1, 1)] >= 0.0;
    }
    let tol = 1e-12 * ss.amax().max(1.0);
    ss.symmetric_eigenvalues().iter().all(|&l| l >= -tol)
}

fn check_order(from: f64, to: f64) -> Result<f64> {
    let dt = to - from;
    if !(dt >= 0.0) {
        return Err(Error::Ordering(format!("to_time {to} precedes from time {from}")));
    }
    Ok(dt)
}

/// η(t) | η(s) under the additive mechanism with mean function μ.
pub fn cond_dist_additive(
    params: &OuParams,
    from: &LatentState,
    to_time: f64,
    mu_from: &DVector<f64>,
    mu_to: &DVector<f64>,
) -> Result<Gaussian> {
    let dt = check_order(from.time, to_time)?;
    let f = params.transition(dt);
    Ok(Gaussian {
        mean: mu_to + &f * (&from.value - mu_from),
        cov: params.transition_cov(dt),
    })
}

/// η(t) | η(s) under the drift mechanism, given the precomputed drift integral.
pub fn cond_dist_drift(
    params: &OuParams,
    from: &LatentState,
    to_time: f64,
    drift_integral: &DVector<f64>,
) -> Result<Gaussian> {
    let dt = check_order(from.time, to_time)?;
    let f = params.transition(dt);
    Ok(Gaussian {
        mean: &f * &from.value + drift_integral,
        cov: params.transition_cov(dt),
    })
}
