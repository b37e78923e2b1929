//! Marginal log-likelihood by importance sampling over the latent path, and
//! the DIC/WAIC built from it.

use nalgebra::allocator::Allocator;
use nalgebra::{DMatrix, DVector, DefaultAllocator, Dyn, U2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SubjectData};
use crate::error::{Error, Result};
use crate::linalg::LatentDim;
use crate::model::ModelConfig;
use crate::params::ParameterVector;
use crate::sampler::PosteriorArchive;
use crate::stats::{self, LN_2PI};
use crate::statespace::{HazardEval, Kernel, SubjectPlan};


pub const JITTER_START: f64 = 1e-8;
pub const JITTER_MAX: f64 = 1e-4;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IcConfig {
    /// Latent importance draws per subject.
    #[serde(default = "d_m")]
    pub m_draws: usize,
    /// Keep every `thin`-th of the final `last` draws of each chain.
    #[serde(default = "d_thin")]
    pub thin: usize,
    #[serde(default = "d_last")]
    pub last: usize,
    #[serde(default)]
    pub seed: u64,
}

fn d_m() -> usize {
    25
}
fn d_thin() -> usize {
    5
}
fn d_last() -> usize {
    1000
}

impl Default for IcConfig {
    fn default() -> Self {
        IcConfig { m_draws: d_m(), thin: d_thin(), last: d_last(), seed: 0 }
    }
}

impl IcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m_draws == 0 || self.thin == 0 || self.last == 0 {
            return Err(Error::Config("m_draws, thin and last must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarginalLoglikReport {
    pub subject_ids: Vec<String>,
    /// log (1/S) Σ_s p(y_i | Θ^s) per subject.
    pub lppd_subject: Vec<f64>,
    pub lppd: f64,
    /// Per-subject marginal log-likelihood at the posterior mean.
    pub loglik_at_mean_subject: Vec<f64>,
    pub loglik_at_mean: f64,
    pub mean_loglik: f64,
    pub p_dic: f64,
    pub p_waic: f64,
    pub dic: f64,
    pub waic: f64,
    pub s: usize,
    pub m: usize,
    pub seed: u64,
    /// Diagonal jitter finally used for each subject's proposal.
    pub jitter: Vec<f64>,
}

/// Selected (chain, draw index) pairs: every `thin`-th of each chain's final `last`.
pub fn select_samples(archive: &PosteriorArchive, thin: usize, last: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (c, ch) in archive.chains.iter().enumerate() {
        let n = ch.draws.len();
        let start = n.saturating_sub(last);
        // Count back from the end so the final draw is always kept.
        let mut idx: Vec<usize> = (start..n).rev().step_by(thin).collect();
        idx.reverse();
        out.extend(idx.into_iter().map(|i| (c, i)));
    }
    out
}

/// Gaussian proposal from the empirical moments of stored latent paths.
#[derive(Debug, Clone)]
pub struct Proposal {
    pub mean: DVector<f64>,
    chol: DMatrix<f64>,
    log_norm: f64,
    pub jitter: f64,
}

impl Proposal {
    pub fn from_draws(draws: &[&[f64]]) -> Result<Proposal> {
        if draws.len() < 2 {
            return Err(Error::InvalidInput("proposal needs at least two latent draws".into()));
        }
        let n = draws[0].len();
        let k = draws.len() as f64;
        let mut mean = DVector::zeros(n);
        for d in draws {
            mean += DVector::from_column_slice(d);
        }
        mean /= k;
        let mut cov = DMatrix::zeros(n, n);
        for d in draws {
            let r = DVector::from_column_slice(d) - &mean;
            cov.ger(1.0 / (k - 1.0), &r, &r, 1.0);
        }
        let mut jitter = JITTER_START;
        loop {
            let mut c = cov.clone();
            for i in 0..n {
                c[(i, i)] += jitter;
            }
            if let Some(ch) = c.cholesky() {
                let l = ch.unpack();
                let log_norm = -0.5 * n as f64 * LN_2PI - (0..n).map(|i| l[(i, i)].ln()).sum::<f64>();
                return Ok(Proposal { mean, chol: l, log_norm, jitter });
            }
            jitter *= 10.0;
            if jitter > JITTER_MAX * 1.000001 {
                return Err(Error::Numerical(format!(
                    "latent covariance not positive definite with jitter {JITTER_MAX}"
                )));
            }
        }
    }

    /// A draw and its log density.
    pub fn sample(&self, rng: &mut impl rand::Rng) -> (Vec<f64>, f64) {
        let n = self.mean.len();
        let z = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
        let x = &self.mean + &self.chol * &z;
        (x.as_slice().to_vec(), self.log_norm - 0.5 * z.dot(&z))
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let r = DVector::from_column_slice(x) - &self.mean;
        let z = self.chol.solve_lower_triangular(&r).expect("proposal factor is nonsingular");
        self.log_norm - 0.5 * z.dot(&z)
    }
}

struct Evaluator<D: LatentDim>
where
    DefaultAllocator: Allocator<D, D> + Allocator<D>,
{
    kernel: Kernel<D>,
    hz: Option<HazardEval>,
}

impl<D: LatentDim> Evaluator<D>
where
    DefaultAllocator: Allocator<D, D> + Allocator<D>,
{
    fn new(model: &ModelConfig, pv: &ParameterVector, d: D) -> Result<Self> {
        Ok(Evaluator { kernel: Kernel::new(model, pv, d)?, hz: HazardEval::new(pv) })
    }

    /// log f_c(y | η) + log p(η | ψ).
    fn joint(&self, plan: &SubjectPlan, eta: &[f64]) -> Result<f64> {
        let mut v = self.kernel.obs_loglik(plan, eta) + self.kernel.path_log_density(plan, eta)?;
        if let Some(h) = &self.hz {
            v += h.loglik(plan, eta, self.kernel.p);
        }
        Ok(v)
    }

    fn estimate(&self, plan: &SubjectPlan, etas: &[Vec<f64>], log_q: &[f64]) -> Result<f64> {
        let lw: Vec<f64> = etas
            .iter()
            .zip(log_q)
            .map(|(e, q)| Ok(self.joint(plan, e)? - q))
            .collect::<Result<_>>()?;
        Ok(stats::logsumexp(&lw) - (lw.len() as f64).ln())
    }
}

fn with_dim<T>(p: usize, f2: impl FnOnce(U2) -> T, fd: impl FnOnce(Dyn) -> T) -> T {
    if p == 2 { f2(U2) } else { fd(Dyn(p)) }
}

/// Conditional log-likelihood log f_c(y_i | η_i, Θ): longitudinal plus event terms.
pub fn conditional_loglik(
    model: &ModelConfig,
    params: &ParameterVector,
    subject: &SubjectData,
    times: &[f64],
    eta: &[f64],
) -> Result<f64> {
    let plan = SubjectPlan::on_times(model, subject, times.to_vec())?;
    let kernel = Kernel::new(model, params, Dyn(model.p))?;
    let mut v = kernel.obs_loglik(&plan, eta);
    if let Some(h) = HazardEval::new(params) {
        v += h.loglik(&plan, eta, model.p);
    }
    Ok(v)
}

/// log[(1/M) Σ_m f_c(y|η^m,Θ) p(η^m|ψ) / q(η^m)] for supplied draws and proposal log densities.
pub fn importance_estimate(
    model: &ModelConfig,
    params: &ParameterVector,
    subject: &SubjectData,
    times: &[f64],
    etas: &[Vec<f64>],
    log_q: &[f64],
) -> Result<f64> {
    if etas.is_empty() || etas.len() != log_q.len() {
        return Err(Error::InvalidInput("need matching, non-empty draws and densities".into()));
    }
    let plan = SubjectPlan::on_times(model, subject, times.to_vec())?;
    with_dim(
        model.p,
        |d| Evaluator::new(model, params, d)?.estimate(&plan, etas, log_q),
        |d| Evaluator::new(model, params, d)?.estimate(&plan, etas, log_q),
    )
}

/// Exact log p(Y_i | ψ) for the longitudinal submodel, by Kalman filtering.
pub fn longitudinal_marginal_loglik(model: &ModelConfig, params: &ParameterVector, subject: &SubjectData) -> Result<f64> {
    let plan = SubjectPlan::build(model, subject)?;
    with_dim(
        model.p,
        |d| Ok(Kernel::new(model, params, d)?.state(&plan)?.loglik_y),
        |d| Ok(Kernel::new(model, params, d)?.state(&plan)?.loglik_y),
    )
}

/// Proposal and importance draws for one subject.
fn subject_draws(
    archive: &PosteriorArchive,
    index: usize,
    m: usize,
    seed: u64,
) -> Result<(Proposal, Vec<Vec<f64>>, Vec<f64>)> {
    let draws: Vec<&[f64]> = archive
        .chains
        .iter()
        .flat_map(|c| c.latent.iter().map(move |d| d.values[index].as_slice()))
        .collect();
    if draws.is_empty() {
        return Err(Error::InvalidInput(format!(
            "archive holds no latent draws for subject {}",
            archive.subject_ids[index]
        )));
    }
    if draws.len() <= draws[0].len() {
        log::warn!(
            "subject {}: {} latent draws for a {}-dimensional proposal; the covariance is rank deficient",
            archive.subject_ids[index],
            draws.len(),
            draws[0].len()
        );
    }
    let prop = Proposal::from_draws(&draws)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stats::fnv1a(&archive.subject_ids[index]));
    let (etas, log_q): (Vec<_>, Vec<_>) = (0..m).map(|_| prop.sample(&mut rng)).unzip();
    Ok((prop, etas, log_q))
}

/// Per-sample marginal log-likelihood estimates for one subject.
pub fn marginal_loglik_subject(
    data: &SubjectData,
    index: usize,
    archive: &PosteriorArchive,
    samples: &[ParameterVector],
    m: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let model = &archive.model;
    let (_, etas, log_q) = subject_draws(archive, index, m, seed)?;
    samples
        .iter()
        .map(|pv| importance_estimate(model, pv, data, &archive.latent_times[index], &etas, &log_q))
        .collect()
}

fn report_inner<D: LatentDim + Send + Sync>(
    d: D,
    data: &Dataset,
    archive: &PosteriorArchive,
    samples: &[ParameterVector],
    theta_hat: &ParameterVector,
    cfg: &IcConfig,
) -> Result<(Vec<Vec<f64>>, Vec<f64>, Vec<f64>)>
where
    DefaultAllocator: Allocator<D, D> + Allocator<D>,
    Kernel<D>: Send + Sync,
{
    let model = &archive.model;
    let evals: Vec<Evaluator<D>> = samples.iter().map(|pv| Evaluator::new(model, pv, d)).collect::<Result<_>>()?;
    let at_mean = Evaluator::new(model, theta_hat, d)?;
    let rows: Vec<Result<(Vec<f64>, f64, f64)>> = (0..data.subjects.len())
        .into_par_iter()
        .map(|i| {
            let subj = &data.subjects[i];
            let plan = SubjectPlan::on_times(model, subj, archive.latent_times[i].clone())?;
            let (prop, etas, log_q) = subject_draws(archive, i, cfg.m_draws, cfg.seed)?;
            let per: Vec<f64> = evals.iter().map(|e| e.estimate(&plan, &etas, &log_q)).collect::<Result<_>>()?;
            let hat = at_mean.estimate(&plan, &etas, &log_q)?;
            Ok((per, hat, prop.jitter))
        })
        .collect();
    let mut per = Vec::new();
    let mut hat = Vec::new();
    let mut jit = Vec::new();
    for r in rows {
        let (a, b, c) = r?;
        per.push(a);
        hat.push(b);
        jit.push(c);
    }
    Ok((per, hat, jit))
}

/// p_DIC and DIC from log p(y|Θ̂) and the per-sample totals.
pub fn compute_dic(loglik_at_mean: f64, sample_totals: &[f64]) -> (f64, f64) {
    let mean = stats::mean(sample_totals);
    let p_dic = 2.0 * (loglik_at_mean - mean);
    (p_dic, -2.0 * loglik_at_mean + 2.0 * p_dic)
}

/// (lppd, p_WAIC, WAIC) from a subject × sample matrix of log-likelihoods.
pub fn compute_waic(per_subject: &[Vec<f64>]) -> Result<(Vec<f64>, f64, f64, f64)> {
    let mut lppd_i = Vec::with_capacity(per_subject.len());
    let mut p_waic = 0.0;
    for row in per_subject {
        if row.len() < 2 {
            return Err(Error::InvalidInput("WAIC needs at least two posterior samples per subject".into()));
        }
        lppd_i.push(stats::logsumexp(row) - (row.len() as f64).ln());
        p_waic += stats::variance(row);
    }
    let lppd: f64 = lppd_i.iter().sum();
    Ok((lppd_i, lppd, p_waic, -2.0 * lppd + 2.0 * p_waic))
}

/// DIC and WAIC for a fitted archive.
pub fn information_criteria(data: &Dataset, archive: &PosteriorArchive, cfg: &IcConfig) -> Result<MarginalLoglikReport> {
    cfg.validate()?;
    let ids: Vec<&str> = data.subjects.iter().map(|s| s.id.as_str()).collect();
    if ids.len() != archive.subject_ids.len() || ids.iter().zip(&archive.subject_ids).any(|(a, b)| a != b) {
        return Err(Error::DataInconsistency("data subjects differ from the archive's".into()));
    }
    let picks = select_samples(archive, cfg.thin, cfg.last);
    if picks.len() < 2 {
        return Err(Error::InvalidInput("fewer than two posterior samples selected".into()));
    }
    let layout = archive.layout();
    let samples: Vec<ParameterVector> =
        picks.iter().map(|&(c, i)| layout.from_flat(&archive.chains[c].draws[i])).collect::<Result<_>>()?;
    let dim = layout.len();
    let mut acc = vec![0.0; dim];
    for &(c, i) in &picks {
        for (a, v) in acc.iter_mut().zip(&archive.chains[c].draws[i]) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= picks.len() as f64);
    let theta_hat = layout.from_flat(&acc)?;

    let p = archive.model.p;
    let (per, hat, jitter) = with_dim(
        p,
        |d| report_inner(d, data, archive, &samples, &theta_hat, cfg),
        |d| report_inner(d, data, archive, &samples, &theta_hat, cfg),
    )?;
    let s = samples.len();
    let totals: Vec<f64> = (0..s).map(|j| per.iter().map(|row| row[j]).sum()).collect();
    let loglik_at_mean: f64 = hat.iter().sum();
    let (p_dic, dic) = compute_dic(loglik_at_mean, &totals);
    let (lppd_subject, lppd, p_waic, waic) = compute_waic(&per)?;
    let report = MarginalLoglikReport {
        subject_ids: archive.subject_ids.clone(),
        lppd_subject,
        lppd,
        loglik_at_mean_subject: hat,
        loglik_at_mean,
        mean_loglik: stats::mean(&totals),
        p_dic,
        p_waic,
        dic,
        waic,
        s,
        m: cfg.m_draws,
        seed: cfg.seed,
        jitter,
    };
    if ![report.lppd, report.dic, report.waic].iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("non-finite information criterion".into()));
    }
    Ok(report)
}
