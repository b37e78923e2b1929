//! Posterior predictive event generation over a window, and mean cumulative
//! function summaries.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::fmt_f64;
use crate::data::{Dataset, SubjectData};
use crate::error::{Error, Result};
use crate::hazard::{gap_cells, log_hazard, EtaPath, NearestPath};
use crate::model::ModelConfig;
use crate::params::ParameterVector;
use crate::sampler::PosteriorArchive;
use crate::simulate::generate_cellwise;
use crate::stats;

pub const MIN_SAMPLES: usize = 20;
pub const ROLLING_WIDTH: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpcWindow {
    pub t_start: f64,
    pub t_stop: f64,
}

impl PpcWindow {
    /// An empty window (t_start = t_stop) is allowed and predicts nothing.
    pub fn new(t_start: f64, t_stop: f64, follow_up_end: f64) -> Result<PpcWindow> {
        if !(t_start >= 0.0 && t_start <= t_stop && t_stop <= follow_up_end + 1e-9) {
            return Err(Error::InvalidInput(format!(
                "window [{t_start}, {t_stop}] must satisfy 0 <= start <= stop <= {follow_up_end}"
            )));
        }
        Ok(PpcWindow { t_start, t_stop })
    }
}

/// Starts at days 0, 2, 5 and 7 running to the end of follow-up.
pub fn default_windows(follow_up_end: f64, days_per_unit: f64) -> Vec<PpcWindow> {
    [0.0, 2.0, 5.0, 7.0]
        .iter()
        .map(|d| d / days_per_unit)
        .filter(|&s| s < follow_up_end)
        .map(|s| PpcWindow { t_start: s, t_stop: follow_up_end })
        .collect()
}

/// Span of the window during which the subject is at risk, if any.
pub fn at_risk_span(subject: &SubjectData, w: &PpcWindow) -> Option<(f64, f64)> {
    let lo = w.t_start.max(subject.at_risk_from);
    let hi = w.t_stop.min(subject.censor_time);
    (hi > lo).then_some((lo, hi))
}

/// Predicted events for one subject and posterior draw. Cells of the fitting
/// grid width start at the window start; the hazard is read at cell midpoints
/// with the nearest stored latent value, and the clock resets at observed
/// events before the window and at predicted events inside it.
pub fn predict_events<R: Rng + ?Sized>(
    model: &ModelConfig,
    params: &ParameterVector,
    subject: &SubjectData,
    latent_times: &[f64],
    latent_values: &[f64],
    window: &PpcWindow,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let spec = params
        .hazard_spec(model)?
        .ok_or_else(|| Error::Config("posterior predictive checks need a hazard submodel".into()))?;
    let Some((lo, hi)) = at_risk_span(subject, window) else {
        return Ok(Vec::new());
    };
    let path = NearestPath { times: latent_times, values: latent_values, p: model.p };
    let schedule = subject.schedule(model.delta_a, model.delta_b)?;
    let amps = params.amplitudes(model);
    let prev = subject.events.iter().rev().find(|&&e| e <= lo).copied();
    let x = (!subject.covariates.is_empty()).then_some(subject.covariates.as_slice());
    let cells = gap_cells(lo, hi, model.grid_width);
    generate_cellwise(
        &cells,
        subject.at_risk_from,
        prev,
        |t, gap, since| {
            let trt = amps.tau_tilde_at(t) * schedule.tent_sum(t, model.delta_b);
            log_hazard(&spec, t, gap, path.eta_at(t)?, trt, since, x)
        },
        rng,
    )
}

/// Right-continuous step function from `origin`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McfCurve {
    pub origin: f64,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl McfCurve {
    pub fn value_at(&self, t: f64) -> f64 {
        let i = self.times.partition_point(|&x| x <= t);
        if i == 0 { 0.0 } else { self.values[i - 1] }
    }

    /// Value with jump times rounded to three decimals.
    pub fn value_at_rounded(&self, t: f64) -> f64 {
        let i = self.times.partition_point(|&x| round3(x) <= t + 1e-12);
        if i == 0 { 0.0 } else { self.values[i - 1] }
    }
}

pub fn round3(t: f64) -> f64 {
    (t * 1000.0).round() / 1000.0
}

/// Nelson-Aalen mean cumulative function. `at_risk[i] = (lo, hi)` means
/// subject i is at risk on (lo, hi]; every event must fall there.
pub fn mcf(events: &[Vec<f64>], at_risk: &[(f64, f64)], origin: f64) -> Result<McfCurve> {
    if events.len() != at_risk.len() {
        return Err(Error::InvalidInput("one at-risk interval per event list required".into()));
    }
    let mut all: Vec<f64> = Vec::new();
    for (ev, &(lo, hi)) in events.iter().zip(at_risk) {
        for &t in ev {
            if !(t > lo && t <= hi) {
                return Err(Error::DataInconsistency(format!("event at {t} outside at-risk interval ({lo}, {hi}]")));
            }
            all.push(t);
        }
    }
    all.sort_by(|a, b| a.total_cmp(b));
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut acc = 0.0;
    let mut i = 0;
    while i < all.len() {
        let t = all[i];
        let mut n = 0;
        while i < all.len() && all[i] == t {
            n += 1;
            i += 1;
        }
        let risk = at_risk.iter().filter(|&&(lo, hi)| t > lo && t <= hi).count();
        if risk == 0 {
            return Err(Error::DataInconsistency(format!("no subject at risk at event time {t}")));
        }
        acc += n as f64 / risk as f64;
        times.push(t);
        values.push(acc);
    }
    Ok(McfCurve { origin, times, values })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpcRow {
    pub time: f64,
    pub median: f64,
    pub p5: f64,
    pub p95: f64,
    pub observed: f64,
}

/// Pointwise median and 5/95 percentiles of predicted curves on a grid of
/// three-decimal times. With `rolling`, each point pools values within
/// ±width/2 instead.
pub fn summarize_ppc(predicted: &[McfCurve], observed: &McfCurve, rolling: Option<f64>) -> Result<Vec<PpcRow>> {
    if predicted.len() < MIN_SAMPLES {
        return Err(Error::InvalidInput(format!(
            "need at least {MIN_SAMPLES} posterior samples, got {}",
            predicted.len()
        )));
    }
    let origin = round3(observed.origin);
    let mut grid: Vec<f64> = std::iter::once(origin)
        .chain(predicted.iter().chain(std::iter::once(observed)).flat_map(|c| c.times.iter().map(|&t| round3(t))))
        .collect();
    grid.sort_by(|a, b| a.total_cmp(b));
    grid.dedup();
    let vals: Vec<Vec<f64>> = grid.iter().map(|&t| predicted.iter().map(|c| c.value_at_rounded(t)).collect()).collect();
    let mut out = Vec::with_capacity(grid.len());
    for (gi, &t) in grid.iter().enumerate() {
        let mut pool: Vec<f64> = match rolling {
            None => vals[gi].clone(),
            Some(w) => {
                let a = grid.partition_point(|&x| x < t - 0.5 * w - 1e-12);
                let b = grid.partition_point(|&x| x <= t + 0.5 * w + 1e-12);
                vals[a..b].concat()
            }
        };
        pool.sort_by(|a, b| a.total_cmp(b));
        out.push(PpcRow {
            time: t,
            median: stats::quantile_sorted(&pool, 0.5),
            p5: stats::quantile_sorted(&pool, 0.05),
            p95: stats::quantile_sorted(&pool, 0.95),
            observed: observed.value_at_rounded(t),
        });
    }
    Ok(out)
}

/// Whether the observed curve stays inside the band on [from, to].
pub fn band_covers(rows: &[PpcRow], from: f64, to: f64) -> bool {
    rows.iter()
        .filter(|r| r.time >= from - 1e-12 && r.time <= to + 1e-12)
        .all(|r| r.observed >= r.p5 - 1e-12 && r.observed <= r.p95 + 1e-12)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpcConfig {
    #[serde(default)]
    pub seed: u64,
    /// Bin width for rolling percentiles; fixed three-decimal grid when absent.
    #[serde(default)]
    pub rolling: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowSummary {
    pub window: PpcWindow,
    pub n_samples: usize,
    pub rows: Vec<PpcRow>,
}

/// Predicted MCFs for every stored latent draw, summarized per window.
pub fn run_ppc(data: &Dataset, archive: &PosteriorArchive, windows: &[PpcWindow], cfg: &PpcConfig) -> Result<Vec<WindowSummary>> {
    if windows.is_empty() {
        return Err(Error::Config("no PPC windows given".into()));
    }
    if let Some(w) = cfg.rolling {
        if !(w > 0.0 && w.is_finite()) {
            return Err(Error::Config("rolling width must be positive".into()));
        }
    }
    if data.subjects.len() != archive.subject_ids.len()
        || data.subjects.iter().zip(&archive.subject_ids).any(|(s, id)| &s.id != id)
    {
        return Err(Error::DataInconsistency("data subjects differ from the archive's".into()));
    }
    let model = &archive.model;
    let picks = archive.draws_with_latent();
    let layout = archive.layout();
    let params: Vec<ParameterVector> = picks
        .iter()
        .map(|&(c, d, _)| layout.from_flat(&archive.chains[c].draws[d]))
        .collect::<Result<_>>()?;
    let keys: Vec<u64> = data.subjects.iter().map(|s| stats::fnv1a(&s.id)).collect();
    let mut out = Vec::with_capacity(windows.len());
    for (wi, w) in windows.iter().enumerate() {
        let spans: Vec<Option<(f64, f64)>> = data.subjects.iter().map(|s| at_risk_span(s, w)).collect();
        let risk: Vec<(f64, f64)> = spans.iter().flatten().copied().collect();
        let observed_events: Vec<Vec<f64>> = data
            .subjects
            .iter()
            .zip(&spans)
            .filter_map(|(s, sp)| sp.map(|(lo, hi)| s.events.iter().copied().filter(|&e| e > lo && e <= hi).collect()))
            .collect();
        let observed = mcf(&observed_events, &risk, w.t_start)?;
        let curves: Vec<Result<McfCurve>> = picks
            .par_iter()
            .zip(&params)
            .enumerate()
            .map(|(si, (&(c, _, li), pv))| {
                let latent = &archive.chains[c].latent[li];
                let mut lists = Vec::with_capacity(risk.len());
                for (i, subj) in data.subjects.iter().enumerate() {
                    if spans[i].is_none() {
                        continue;
                    }
                    let task = stats::mix_seed(stats::mix_seed(cfg.seed, wi as u64), si as u64);
                    let mut rng = ChaCha8Rng::seed_from_u64(task);
                    rng.set_stream(keys[i]);
                    lists.push(predict_events(model, pv, subj, &archive.latent_times[i], &latent.values[i], w, &mut rng)?);
                }
                mcf(&lists, &risk, w.t_start)
            })
            .collect();
        let curves: Vec<McfCurve> = curves.into_iter().collect::<Result<_>>()?;
        let rows = summarize_ppc(&curves, &observed, cfg.rolling)?;
        out.push(WindowSummary { window: *w, n_samples: curves.len(), rows });
    }
    Ok(out)
}

/// window_start, window_stop, time, median, p5, p95, observed.
pub fn summary_csv(summaries: &[WindowSummary]) -> String {
    let mut s = String::from("window_start,window_stop,time,median,p5,p95,observed\n");
    for w in summaries {
        for r in &w.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                fmt_f64(w.window.t_start),
                fmt_f64(w.window.t_stop),
                fmt_f64(r.time),
                fmt_f64(r.median),
                fmt_f64(r.p5),
                fmt_f64(r.p95),
                fmt_f64(r.observed)
            );
        }
    }
    s
}
