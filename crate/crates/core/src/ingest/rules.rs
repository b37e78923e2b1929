//! Substance-use reports to event times. All times here are seconds.

use serde::Serialize;

use crate::error::{Error, Result};

/// Curation constants; bump `version` whenever a rule changes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurationRules {
    pub version: u32,
    /// Multi-unit reports spanning less than this become one midpoint event.
    pub consolidation_secs: f64,
    /// Spacing of events for "more than 10 cigarettes".
    pub heavy_spacing_secs: f64,
    pub puffs_first_event: u32,
    pub puffs_per_event: u32,
    /// Response gaps longer than this censor the subject.
    pub censor_gap_days: f64,
}

pub const RULES: CurationRules = CurationRules {
    version: 1,
    consolidation_secs: 3600.0,
    heavy_spacing_secs: 3600.0,
    puffs_first_event: 15,
    puffs_per_event: 10,
    censor_gap_days: 2.0,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CigaretteCount {
    None,
    /// Partial cigarettes count as one.
    Count(u32),
    MoreThanTen,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReportTimes {
    pub single: Option<f64>,
    pub first: Option<f64>,
    pub last: Option<f64>,
}

fn single(t: &ReportTimes, what: &str) -> Result<f64> {
    t.single.ok_or_else(|| Error::InvalidInput(format!("{what}: single use needs a reported time")))
}

fn interval(t: &ReportTimes, what: &str) -> Result<(f64, f64)> {
    match (t.first, t.last) {
        (Some(a), Some(b)) if b < a => Err(Error::Ordering(format!("{what}: interval ends before it starts"))),
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(Error::InvalidInput(format!("{what}: multiple uses need first and last times"))),
    }
}

/// n events evenly spaced over [a, b] including both ends, or one event at
/// the midpoint when the interval is shorter than the consolidation window.
pub fn spread(n: u32, a: f64, b: f64) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    if n == 1 || b - a < RULES.consolidation_secs {
        return vec![0.5 * (a + b)];
    }
    let step = (b - a) / (n - 1) as f64;
    (0..n).map(|i| if i == n - 1 { b } else { a + step * i as f64 }).collect()
}

pub fn cigarettes_to_events(count: CigaretteCount, times: &ReportTimes) -> Result<Vec<f64>> {
    match count {
        CigaretteCount::None | CigaretteCount::Count(0) => Ok(Vec::new()),
        CigaretteCount::Count(1) => Ok(vec![single(times, "cigarettes")?]),
        CigaretteCount::Count(n) => {
            let (a, b) = interval(times, "cigarettes")?;
            Ok(spread(n, a, b))
        }
        CigaretteCount::MoreThanTen => {
            let (a, b) = interval(times, "cigarettes")?;
            if b - a < RULES.consolidation_secs {
                return Ok(vec![0.5 * (a + b)]);
            }
            let n = ((b - a) / RULES.heavy_spacing_secs).floor() as u32;
            Ok((0..=n).map(|k| a + RULES.heavy_spacing_secs * k as f64).collect())
        }
    }
}

/// Vaping events implied by a puff count: 1–15 is one, then one more per 10.
pub fn puff_events(puffs: u32) -> u32 {
    if puffs == 0 {
        0
    } else if puffs <= RULES.puffs_first_event {
        1
    } else {
        1 + (puffs - RULES.puffs_first_event).div_ceil(RULES.puffs_per_event)
    }
}

pub fn puffs_to_events(puffs: u32, times: &ReportTimes) -> Result<Vec<f64>> {
    match puffs {
        0 => Ok(Vec::new()),
        1 => Ok(vec![single(times, "vaping")?]),
        _ => {
            let (a, b) = interval(times, "vaping")?;
            Ok(spread(puff_events(puffs), a, b))
        }
    }
}
