//! Nonresponse censoring and exclusion.

use crate::error::{Error, Result};
use crate::ingest::rules::RULES;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Exclusion {
    NoCompletedEma,
    NoResponseFirst48h,
}

impl Exclusion {
    pub fn code(self) -> &'static str {
        match self {
            Exclusion::NoCompletedEma => "no_completed_ema",
            Exclusion::NoResponseFirst48h => "no_response_first_48h",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Censoring {
    Included { censor_time: f64 },
    Excluded(Exclusion),
}

/// `completed` holds completed-EMA times in days from study start, sorted.
pub fn apply_censoring(completed: &[f64]) -> Result<Censoring> {
    if completed.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Ordering("EMA times must be sorted".into()));
    }
    let gap = RULES.censor_gap_days;
    let Some(&first) = completed.first() else {
        return Ok(Censoring::Excluded(Exclusion::NoCompletedEma));
    };
    if first > gap {
        return Ok(Censoring::Excluded(Exclusion::NoResponseFirst48h));
    }
    for w in completed.windows(2) {
        if w[1] - w[0] > gap {
            return Ok(Censoring::Included { censor_time: w[0] });
        }
    }
    Ok(Censoring::Included { censor_time: *completed.last().unwrap() })
}
