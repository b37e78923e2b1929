//! Factor measurement model with random intercepts integrated out.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::LN_2PI;

/// Loadings with a fixed structural-zero pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadingsSpec {
    pub k: usize,
    pub p: usize,
    /// Row-major k×p mask of free cells.
    pub pattern: Vec<bool>,
    /// Free-cell values in row-major order.
    pub values: Vec<f64>,
}

impl LoadingsSpec {
    pub fn new(k: usize, p: usize, pattern: Vec<bool>, values: Vec<f64>) -> Result<Self> {
        let spec = LoadingsSpec { k, p, pattern, values };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        validate_pattern(self.k, self.p, &self.pattern)?;
        let free = self.pattern.iter().filter(|&&b| b).count();
        if self.values.len() != free {
            return Err(Error::InvalidParameter(format!(
                "{} loading values for {free} free cells",
                self.values.len()
            )));
        }
        if self.values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter("loadings must be strictly positive".into()));
        }
        Ok(())
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.k, self.p);
        let mut it = self.values.iter();
        for r in 0..self.k {
            for c in 0..self.p {
                if self.pattern[r * self.p + c] {
                    m[(r, c)] = *it.next().unwrap();
                }
            }
        }
        m
    }
}

pub fn validate_pattern(k: usize, p: usize, pattern: &[bool]) -> Result<()> {
    if pattern.len() != k * p {
        return Err(Error::InvalidParameter("loading pattern has the wrong size".into()));
    }
    if p >= k {
        return Err(Error::InvalidParameter("need fewer factors than outcomes".into()));
    }
    for r in 0..k {
        if !(0..p).any(|c| pattern[r * p + c]) {
            return Err(Error::InvalidParameter(format!("outcome {r} loads on no factor")));
        }
    }
    for c in 0..p {
        if !(0..k).any(|r| pattern[r * p + c]) {
            return Err(Error::InvalidParameter(format!("factor {c} has no indicators")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma_u2: Vec<f64>,
    pub sigma_eps2: Vec<f64>,
}

impl NoiseSpec {
    pub fn validate(&self, k: usize) -> Result<()> {
        if self.sigma_u2.len() != k || self.sigma_eps2.len() != k {
            return Err(Error::InvalidParameter("noise vectors must have length k".into()));
        }
        if self
            .sigma_u2
            .iter()
            .chain(&self.sigma_eps2)
            .any(|v| !(*v > 0.0 && v.is_finite()))
        {
            return Err(Error::InvalidParameter("variances must be positive and finite".into()));
        }
        Ok(())
    }

    pub fn total(&self) -> Vec<f64> {
        self.sigma_u2.iter().zip(&self.sigma_eps2).map(|(a, b)| a + b).collect()
    }
}

/// Log-density of one observation vector given η, skipping missing items.
pub fn obs_loglik(loadings: &LoadingsSpec, noise: &NoiseSpec, eta: &[f64], y: &[Option<f64>]) -> Result<f64> {
    noise.validate(loadings.k)?;
    if y.len() != loadings.k || eta.len() != loadings.p {
        return Err(Error::InvalidInput("observation or latent length mismatch".into()));
    }
    let lam = loadings.matrix();
    let mut acc = 0.0;
    for (r, yk) in y.iter().enumerate() {
        let Some(yk) = yk else { continue };
        let mean: f64 = (0..loadings.p).map(|c| lam[(r, c)] * eta[c]).sum();
        let var = noise.sigma_u2[r] + noise.sigma_eps2[r];
        let d = yk - mean;
        acc += -0.5 * (LN_2PI + var.ln() + d * d / var);
    }
    Ok(acc)
}

/// Λη + u + ε with fresh measurement error.
pub fn simulate_observation<R: Rng + ?Sized>(
    loadings: &LoadingsSpec,
    noise: &NoiseSpec,
    eta: &[f64],
    u: &[f64],
    rng: &mut R,
) -> DVector<f64> {
    let lam = loadings.matrix();
    let base = &lam * DVector::from_column_slice(eta);
    DVector::from_fn(loadings.k, |r, _| {
        let z: f64 = rng.sample(StandardNormal);
        base[r] + u[r] + noise.sigma_eps2[r].sqrt() * z
    })
}
