//! Starting values: longitudinal fit first, then the hazard with paths held fixed.

use crate::data::Dataset;
use crate::error::Result;
use crate::model::{BaselineKind, ModelConfig};
use crate::params::{BaselineParams, Block, ParamLayout, ParameterVector};
use crate::sampler::{run_mcmc, LatentMode, SamplerConfig};
use crate::stats;

const STAGE_ITERATIONS: usize = 600;
const STAGE_BURN_IN: usize = 300;

/// Method-of-moments guesses for the measurement and structural parameters.
pub fn moment_init(data: &Dataset, model: &ModelConfig) -> ParameterVector {
    let layout = ParamLayout::new(model);
    let mut pv = layout.reference_point();
    let k = model.k;
    // Pairwise-complete pooled moments.
    let mut sum = vec![0.0; k];
    let mut cnt = vec![0.0; k];
    for o in data.subjects.iter().flat_map(|s| &s.observations) {
        for (i, y) in o.y.iter().enumerate() {
            if let Some(y) = y {
                sum[i] += y;
                cnt[i] += 1.0;
            }
        }
    }
    let mean: Vec<f64> = sum.iter().zip(&cnt).map(|(s, c)| if *c > 0.0 { s / c } else { 0.0 }).collect();
    let mut cov = vec![vec![0.0; k]; k];
    let mut ccnt = vec![vec![0.0; k]; k];
    for o in data.subjects.iter().flat_map(|s| &s.observations) {
        for a in 0..k {
            let Some(ya) = o.y[a] else { continue };
            for b in 0..k {
                let Some(yb) = o.y[b] else { continue };
                cov[a][b] += (ya - mean[a]) * (yb - mean[b]);
                ccnt[a][b] += 1.0;
            }
        }
    }
    for a in 0..k {
        for b in 0..k {
            cov[a][b] = if ccnt[a][b] > 1.0 { cov[a][b] / (ccnt[a][b] - 1.0) } else { 0.0 };
        }
    }
    let items: Vec<Vec<usize>> = (0..model.p).map(|c| (0..k).filter(|&r| model.pattern[r][c]).collect()).collect();
    let mut lam = vec![vec![0.0; model.p]; k];
    for (c, its) in items.iter().enumerate() {
        for &r in its {
            let others: Vec<usize> = its.iter().copied().filter(|&x| x != r).collect();
            let est = match others.as_slice() {
                [] => (cov[r][r] / 2.0).abs().sqrt(),
                [l] => cov[r][*l].abs().sqrt(),
                [l, m, ..] => {
                    let denom = cov[*l][*m].abs().max(1e-8);
                    (cov[r][*l] * cov[r][*m] / denom).abs().sqrt()
                }
            };
            let first = (0..model.p).find(|&cc| model.pattern[r][cc]) == Some(c);
            lam[r][c] = if first { est.clamp(0.05, 10.0) } else { 0.3 };
        }
    }
    pv.loadings = (0..k)
        .flat_map(|r| (0..model.p).filter(move |&c| model.pattern[r][c]).map(move |c| (r, c)))
        .map(|(r, c)| lam[r][c])
        .collect();
    for r in 0..k {
        let explained: f64 = (0..model.p).map(|c| lam[r][c] * lam[r][c]).sum();
        let resid = (cov[r][r] - explained).max(0.1 * cov[r][r]).max(1e-4);
        pv.sigma_u[r] = (resid / 2.0).sqrt();
        pv.sigma_eps[r] = (resid / 2.0).sqrt();
    }
    let mut idx = 0;
    for a in 0..model.p {
        for b in (a + 1)..model.p {
            let mut acc = Vec::new();
            for &r in &items[a] {
                for &s in &items[b] {
                    if lam[r][a] > 0.0 && lam[s][b] > 0.0 && r != s {
                        acc.push(cov[r][s] / (lam[r][a] * lam[s][b]));
                    }
                }
            }
            pv.rho[idx] = if acc.is_empty() { 0.0 } else { stats::mean(&acc).clamp(-0.8, 0.8) };
            idx += 1;
        }
    }
    for i in 0..model.p {
        pv.theta[i * model.p + i] = 2.0 * model.days_per_unit;
    }
    if !crate::prior::structurally_feasible(&pv) {
        pv.rho.iter_mut().for_each(|r| *r = 0.0);
    }
    pv
}

fn medians(archive: &crate::sampler::PosteriorArchive) -> Result<Vec<f64>> {
    archive.param_names.iter().map(|n| archive.median(n)).collect()
}

/// Two-stage starting values; falls back to a reference point if a stage fails.
pub fn two_stage_init(data: &Dataset, model: &ModelConfig, seed: u64) -> Result<ParameterVector> {
    let full_layout = ParamLayout::new(model);
    let long_model = model.longitudinal_only();
    let long_layout = ParamLayout::new(&long_model);
    let start = moment_init(data, &long_model);
    let stage = SamplerConfig {
        iterations: STAGE_ITERATIONS,
        burn_in: STAGE_BURN_IN,
        seed: seed ^ 0x9e37_79b9_7f4a_7c15,
        store_latent: false,
        latent: LatentMode::Frozen,
        initial: Some(start.clone()),
        ..SamplerConfig::default()
    };
    let psi = match run_mcmc(data, &long_model, &stage) {
        Ok(a) => long_layout.from_flat(&medians(&a)?)?,
        Err(e) => {
            log::warn!("longitudinal stage failed ({e}); using moment estimates");
            start
        }
    };
    let mut pv = full_layout.reference_point();
    pv.theta = psi.theta;
    pv.rho = psi.rho;
    pv.loadings = psi.loadings;
    pv.sigma_lambda = psi.sigma_lambda;
    pv.sigma_u = psi.sigma_u;
    pv.sigma_eps = psi.sigma_eps;
    pv.tau = psi.tau;
    let Some(hc) = &model.hazard else { return Ok(pv) };

    let events = data.total_events();
    let exposure: f64 = data.subjects.iter().map(|s| s.censor_time - s.at_risk_from).sum();
    if events == 0 || exposure <= 0.0 {
        log::warn!("no events in the data; hazard coefficients start at their prior modes");
        return Ok(pv);
    }
    if let Some(h) = pv.hazard.as_mut() {
        let rate = events as f64 / exposure;
        h.baseline = match hc.baseline {
            BaselineKind::Constant => BaselineParams::Constant { beta0: rate.ln() },
            BaselineKind::LogNormalPrePost => {
                let mu = (1.0 / rate).ln();
                BaselineParams::LogNormalPrePost { mu0_pre: mu, sigma0_pre: 1.0, mu0_post: mu, sigma0_post: 1.0 }
            }
        };
    }
    let fixed = full_layout
        .coords
        .iter()
        .filter(|c| c.block != Block::Hazard)
        .map(|c| c.name.clone())
        .collect();
    let stage2 = SamplerConfig {
        fixed,
        initial: Some(pv.clone()),
        seed: seed ^ 0x7f4a_7c15_9e37_79b9,
        ..stage
    };
    match run_mcmc(data, model, &stage2) {
        Ok(a) => full_layout.from_flat(&medians(&a)?),
        Err(e) => {
            log::warn!("hazard stage failed ({e}); using crude hazard rate");
            Ok(pv)
        }
    }
}
