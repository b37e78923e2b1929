//! Joint parameter vector and its flat, named coordinate layout.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hazard::{Baseline, EventHistoryTerm, HazardSpec};
use crate::measurement::{LoadingsSpec, NoiseSpec};
use crate::model::{BaselineKind, ModelConfig};
use crate::ou::OuParams;
use crate::treatment::TreatmentAmplitudes;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum BaselineParams {
    Constant {
        beta0: f64,
    },
    LogNormalPrePost {
        mu0_pre: f64,
        sigma0_pre: f64,
        mu0_post: f64,
        sigma0_post: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardParams {
    pub baseline: BaselineParams,
    pub beta_latent: Vec<f64>,
    #[serde(default)]
    pub beta3: Option<f64>,
    #[serde(default)]
    pub gamma: Vec<f64>,
    pub tau_tilde_pre: f64,
    /// Present only when the model splits the treatment amplitude at a quit time.
    #[serde(default)]
    pub tau_tilde_post: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    /// Row-major p×p mean-reversion matrix.
    pub theta: Vec<f64>,
    pub rho: Vec<f64>,
    pub loadings: Vec<f64>,
    pub sigma_lambda: f64,
    /// Random-intercept standard deviations.
    pub sigma_u: Vec<f64>,
    /// Measurement-error standard deviations.
    pub sigma_eps: Vec<f64>,
    pub tau: Vec<f64>,
    #[serde(default)]
    pub hazard: Option<HazardParams>,
}

impl ParameterVector {
    pub fn p(&self) -> usize {
        self.tau.len()
    }

    pub fn theta_matrix(&self) -> DMatrix<f64> {
        let p = self.p();
        DMatrix::from_row_slice(p, p, &self.theta)
    }

    pub fn ou(&self) -> Result<OuParams> {
        OuParams::new(self.theta_matrix(), self.rho.clone())
    }

    pub fn loadings_spec(&self, model: &ModelConfig) -> Result<LoadingsSpec> {
        LoadingsSpec::new(model.k, model.p, model.flat_pattern(), self.loadings.clone())
    }

    pub fn noise(&self) -> NoiseSpec {
        NoiseSpec {
            sigma_u2: self.sigma_u.iter().map(|s| s * s).collect(),
            sigma_eps2: self.sigma_eps.iter().map(|s| s * s).collect(),
        }
    }

    pub fn hazard_spec(&self, model: &ModelConfig) -> Result<Option<HazardSpec>> {
        let (Some(hc), Some(hp)) = (&model.hazard, &self.hazard) else {
            return Ok(None);
        };
        let baseline = match (&hp.baseline, hc.baseline) {
            (BaselineParams::Constant { beta0 }, BaselineKind::Constant) => Baseline::Constant { beta0: *beta0 },
            (
                BaselineParams::LogNormalPrePost { mu0_pre, sigma0_pre, mu0_post, sigma0_post },
                BaselineKind::LogNormalPrePost,
            ) => Baseline::LogNormalPrePost {
                mu0_pre: *mu0_pre,
                sigma0_pre: *sigma0_pre,
                mu0_post: *mu0_post,
                sigma0_post: *sigma0_post,
                quit_time: hc.quit_time.unwrap_or(f64::INFINITY),
            },
            _ => return Err(Error::InvalidParameter("baseline parameters do not match the model".into())),
        };
        let event_history = match (hc.event_history, hp.beta3) {
            (Some(g), Some(beta3)) => Some(EventHistoryTerm { beta3, g }),
            (None, None) => None,
            _ => return Err(Error::InvalidParameter("beta3 presence does not match the model".into())),
        };
        Ok(Some(HazardSpec {
            baseline,
            beta_latent: hp.beta_latent.clone(),
            event_history,
            covariate_coefs: hp.gamma.clone(),
        }))
    }

    pub fn amplitudes(&self, model: &ModelConfig) -> TreatmentAmplitudes {
        let quit = model.hazard.as_ref().and_then(|h| h.quit_time);
        match &self.hazard {
            Some(h) => TreatmentAmplitudes {
                tau: self.tau.clone(),
                tau_tilde_pre: h.tau_tilde_pre,
                tau_tilde_post: h.tau_tilde_post.unwrap_or(h.tau_tilde_pre),
                quit_time: quit.filter(|_| h.tau_tilde_post.is_some()),
            },
            None => TreatmentAmplitudes::single(self.tau.clone(), 0.0),
        }
    }

    /// Values in layout order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::new();
        v.extend(&self.theta);
        v.extend(&self.rho);
        v.extend(&self.loadings);
        v.push(self.sigma_lambda);
        v.extend(&self.sigma_u);
        v.extend(&self.sigma_eps);
        v.extend(&self.tau);
        if let Some(h) = &self.hazard {
            match &h.baseline {
                BaselineParams::Constant { beta0 } => v.push(*beta0),
                BaselineParams::LogNormalPrePost { mu0_pre, sigma0_pre, mu0_post, sigma0_post } => {
                    v.extend([*mu0_pre, *sigma0_pre, *mu0_post, *sigma0_post])
                }
            }
            v.extend(&h.beta_latent);
            v.extend(h.beta3);
            v.extend(&h.gamma);
            v.push(h.tau_tilde_pre);
            v.extend(h.tau_tilde_post);
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity,
    Log,
    Atanh,
}

impl Transform {
    pub fn forward(self, x: f64) -> f64 {
        match self {
            Transform::Identity => x,
            Transform::Log => x.ln(),
            Transform::Atanh => x.atanh(),
        }
    }

    pub fn inverse(self, u: f64) -> f64 {
        match self {
            Transform::Identity => u,
            Transform::Log => u.exp(),
            Transform::Atanh => u.tanh(),
        }
    }

    /// log |dx/du| at unconstrained value u.
    pub fn log_jacobian(self, u: f64) -> f64 {
        match self {
            Transform::Identity => 0.0,
            Transform::Log => u,
            Transform::Atanh => {
                // 1 − tanh²(u) = 4 e^{−2|u|} / (1 + e^{−2|u|})²
                let a = (-2.0 * u.abs()).exp();
                (4.0f64).ln() - 2.0 * u.abs() - 2.0 * a.ln_1p()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Structural,
    Loadings,
    Scales,
    Hazard,
    Tau,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coord {
    pub name: String,
    pub block: Block,
    pub transform: Transform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub coords: Vec<Coord>,
    model: ModelConfig,
}

impl ParamLayout {
    pub fn new(model: &ModelConfig) -> ParamLayout {
        let p = model.p;
        let mut c = Vec::new();
        let mut push = |name: String, block, transform| c.push(Coord { name, block, transform });
        for i in 0..p {
            for j in 0..p {
                push(format!("theta[{},{}]", i + 1, j + 1), Block::Structural, Transform::Identity);
            }
        }
        for i in 0..p {
            for j in (i + 1)..p {
                push(format!("rho[{},{}]", i + 1, j + 1), Block::Structural, Transform::Atanh);
            }
        }
        for (r, row) in model.pattern.iter().enumerate() {
            for (col, &free) in row.iter().enumerate() {
                if free {
                    push(format!("lambda[{},{}]", r + 1, col + 1), Block::Loadings, Transform::Log);
                }
            }
        }
        push("sigma_lambda".into(), Block::Loadings, Transform::Log);
        for r in 0..model.k {
            push(format!("sigma_u[{}]", r + 1), Block::Scales, Transform::Log);
        }
        for r in 0..model.k {
            push(format!("sigma_eps[{}]", r + 1), Block::Scales, Transform::Log);
        }
        for i in 0..p {
            push(format!("tau[{}]", i + 1), Block::Tau, Transform::Identity);
        }
        if let Some(h) = &model.hazard {
            match h.baseline {
                BaselineKind::Constant => push("beta0".into(), Block::Hazard, Transform::Identity),
                BaselineKind::LogNormalPrePost => {
                    push("mu0_pre".into(), Block::Hazard, Transform::Identity);
                    push("sigma0_pre".into(), Block::Hazard, Transform::Log);
                    push("mu0_post".into(), Block::Hazard, Transform::Identity);
                    push("sigma0_post".into(), Block::Hazard, Transform::Log);
                }
            }
            for i in 0..p {
                push(format!("beta[{}]", i + 1), Block::Hazard, Transform::Identity);
            }
            if h.event_history.is_some() {
                push("beta3".into(), Block::Hazard, Transform::Identity);
            }
            for i in 0..h.n_covariates {
                push(format!("gamma[{}]", i + 1), Block::Hazard, Transform::Identity);
            }
            if h.quit_time.is_some() {
                push("tau_tilde_pre".into(), Block::Hazard, Transform::Identity);
                push("tau_tilde_post".into(), Block::Hazard, Transform::Identity);
            } else {
                push("tau_tilde".into(), Block::Hazard, Transform::Identity);
            }
        }
        ParamLayout { coords: c, model: model.clone() }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.coords.iter().map(|c| c.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.coords.iter().position(|c| c.name == name)
    }

    pub fn model(&self) -> &ModelConfig {
        &self.model
    }

    /// Checks that `pv` has the shape this layout expects.
    pub fn check(&self, pv: &ParameterVector) -> Result<()> {
        let m = &self.model;
        let ok = pv.theta.len() == m.p * m.p
            && pv.rho.len() == m.p * (m.p - 1) / 2
            && pv.loadings.len() == m.n_loadings()
            && pv.sigma_u.len() == m.k
            && pv.sigma_eps.len() == m.k
            && pv.tau.len() == m.p
            && pv.hazard.is_some() == m.hazard.is_some()
            && pv.to_flat().len() == self.len();
        if !ok {
            return Err(Error::InvalidParameter("parameter vector does not match the model layout".into()));
        }
        if let (Some(h), Some(hc)) = (&pv.hazard, &m.hazard) {
            let base_ok = matches!(
                (&h.baseline, hc.baseline),
                (BaselineParams::Constant { .. }, BaselineKind::Constant)
                    | (BaselineParams::LogNormalPrePost { .. }, BaselineKind::LogNormalPrePost)
            );
            if !base_ok
                || h.beta_latent.len() != m.p
                || h.beta3.is_some() != hc.event_history.is_some()
                || h.gamma.len() != hc.n_covariates
                || h.tau_tilde_post.is_some() != hc.quit_time.is_some()
            {
                return Err(Error::InvalidParameter("hazard parameters do not match the model".into()));
            }
        }
        Ok(())
    }

    pub fn from_flat(&self, v: &[f64]) -> Result<ParameterVector> {
        if v.len() != self.len() {
            return Err(Error::InvalidParameter(format!("expected {} values, got {}", self.len(), v.len())));
        }
        let m = &self.model;
        let mut it = v.iter().copied();
        let mut take = |n: usize| -> Vec<f64> { (&mut it).take(n).collect() };
        let theta = take(m.p * m.p);
        let rho = take(m.p * (m.p - 1) / 2);
        let loadings = take(m.n_loadings());
        let sigma_lambda = take(1)[0];
        let sigma_u = take(m.k);
        let sigma_eps = take(m.k);
        let tau = take(m.p);
        let hazard = m.hazard.as_ref().map(|h| {
            let baseline = match h.baseline {
                BaselineKind::Constant => BaselineParams::Constant { beta0: take(1)[0] },
                BaselineKind::LogNormalPrePost => {
                    let b = take(4);
                    BaselineParams::LogNormalPrePost { mu0_pre: b[0], sigma0_pre: b[1], mu0_post: b[2], sigma0_post: b[3] }
                }
            };
            let beta_latent = take(m.p);
            let beta3 = h.event_history.map(|_| take(1)[0]);
            let gamma = take(h.n_covariates);
            let tau_tilde_pre = take(1)[0];
            let tau_tilde_post = h.quit_time.map(|_| take(1)[0]);
            HazardParams { baseline, beta_latent, beta3, gamma, tau_tilde_pre, tau_tilde_post }
        });
        Ok(ParameterVector { theta, rho, loadings, sigma_lambda, sigma_u, sigma_eps, tau, hazard })
    }

    pub fn to_unconstrained(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.coords).map(|(v, c)| c.transform.forward(*v)).collect()
    }

    pub fn to_constrained(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(&self.coords).map(|(v, c)| c.transform.inverse(*v)).collect()
    }

    pub fn log_jacobian(&self, u: &[f64]) -> f64 {
        u.iter().zip(&self.coords).map(|(v, c)| c.transform.log_jacobian(*v)).sum()
    }

    /// A feasible reference point: identity reversion, independent factors,
    /// unit loadings, small scales and null hazard effects.
    pub fn reference_point(&self) -> ParameterVector {
        let m = &self.model;
        let p = m.p;
        let mut theta = vec![0.0; p * p];
        for i in 0..p {
            theta[i * p + i] = m.days_per_unit;
        }
        let hazard = m.hazard.as_ref().map(|h| HazardParams {
            baseline: match h.baseline {
                BaselineKind::Constant => BaselineParams::Constant { beta0: 0.0 },
                BaselineKind::LogNormalPrePost => BaselineParams::LogNormalPrePost {
                    mu0_pre: 0.0,
                    sigma0_pre: 1.0,
                    mu0_post: 0.0,
                    sigma0_post: 1.0,
                },
            },
            beta_latent: vec![0.0; p],
            beta3: h.event_history.map(|_| 0.0),
            gamma: vec![0.0; h.n_covariates],
            tau_tilde_pre: 0.0,
            tau_tilde_post: h.quit_time.map(|_| 0.0),
        });
        ParameterVector {
            theta,
            rho: vec![0.0; p * (p - 1) / 2],
            loadings: vec![1.0; m.n_loadings()],
            sigma_lambda: 1.0,
            sigma_u: vec![0.1; m.k],
            sigma_eps: vec![0.1; m.k],
            tau: vec![0.0; p],
            hazard,
        }
    }
}
