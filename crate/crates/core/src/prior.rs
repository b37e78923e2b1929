//! Prior densities and feasibility checks.

use crate::linalg;
use crate::ou::{self, OuParams};
use crate::params::{BaselineParams, ParameterVector};
use crate::stats::{half_cauchy_logpdf, half_normal_logpdf, normal_logpdf};

pub const RHO_BOUND: f64 = 0.999_999;
pub const THETA_SD: f64 = 10.0;
pub const COEF_SD: f64 = 5.0;
pub const SCALE_CAUCHY: f64 = 5.0;
/// Prior location of every loading before truncation to the positive axis.
pub const LOADING_MODE: f64 = 1.0;

/// Structural feasibility: stable θ, admissible ρ, PSD implied σσᵀ.
pub fn structurally_feasible(pv: &ParameterVector) -> bool {
    if pv.rho.iter().any(|r| !(r.abs() < RHO_BOUND)) {
        return false;
    }
    let theta = pv.theta_matrix();
    if !linalg::is_stable(&theta) {
        return false;
    }
    match OuParams::new(theta, pv.rho.clone()) {
        Ok(ou) => ou::sigma_feasible(&ou),
        Err(_) => false,
    }
}

/// Joint log prior density; −∞ off the feasible set.
pub fn log_prior(pv: &ParameterVector) -> f64 {
    if !structurally_feasible(pv) {
        return f64::NEG_INFINITY;
    }
    let mut lp = 0.0;
    lp += pv.theta.iter().map(|&t| normal_logpdf(t, 0.0, THETA_SD)).sum::<f64>();
    lp -= pv.rho.len() as f64 * (2.0 * RHO_BOUND).ln();
    lp += half_cauchy_logpdf(pv.sigma_lambda, SCALE_CAUCHY);
    lp += pv
        .loadings
        .iter()
        .map(|&l| half_normal_logpdf(l, LOADING_MODE, pv.sigma_lambda))
        .sum::<f64>();
    lp += pv
        .sigma_u
        .iter()
        .chain(&pv.sigma_eps)
        .map(|&s| half_cauchy_logpdf(s, SCALE_CAUCHY))
        .sum::<f64>();
    lp += pv.tau.iter().map(|&t| normal_logpdf(t, 0.0, COEF_SD)).sum::<f64>();
    if let Some(h) = &pv.hazard {
        match h.baseline {
            BaselineParams::Constant { beta0 } => lp += normal_logpdf(beta0, 0.0, COEF_SD),
            BaselineParams::LogNormalPrePost { mu0_pre, sigma0_pre, mu0_post, sigma0_post } => {
                lp += normal_logpdf(mu0_pre, 0.0, COEF_SD) + normal_logpdf(mu0_post, 0.0, COEF_SD);
                lp += half_cauchy_logpdf(sigma0_pre, SCALE_CAUCHY) + half_cauchy_logpdf(sigma0_post, SCALE_CAUCHY);
            }
        }
        let coefs = h
            .beta_latent
            .iter()
            .chain(h.beta3.iter())
            .chain(&h.gamma)
            .chain(std::iter::once(&h.tau_tilde_pre))
            .chain(h.tau_tilde_post.iter());
        lp += coefs.map(|&c| normal_logpdf(c, 0.0, COEF_SD)).sum::<f64>();
    }
    if lp.is_nan() {
        f64::NEG_INFINITY
    } else {
        lp
    }
}
