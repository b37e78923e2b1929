//! Raw EMA exports to the CSV bundle used everywhere else.
//!
//! Input columns are documented in docs/schema.md. Times are ISO-8601 and
//! become fractional days from each subject's study start.

pub mod censor;
pub mod rules;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::{DateTime, NaiveDateTime};

use crate::bundle::fmt_f64;
use crate::data::{Dataset, Observation, SubjectData};
use crate::error::{Error, Result};
use censor::{apply_censoring, Censoring, Exclusion};
use rules::{cigarettes_to_events, puffs_to_events, CigaretteCount, ReportTimes};

pub const EMOTIONS: usize = 15;
pub const SECS_PER_DAY: f64 = 86400.0;
/// Shift applied to an event tied with the previous one (or the study start).
pub const TIE_SHIFT_SECS: f64 = 1.0;

const EMA_FIXED: [&str; 3] = ["subject_id", "timestamp", "completed"];
const EMA_SUBSTANCE: [&str; 9] = [
    "marijuana_time",
    "cig_count",
    "cig_time",
    "cig_first",
    "cig_last",
    "puffs",
    "vape_time",
    "vape_first",
    "vape_last",
];

pub fn ema_header() -> Vec<String> {
    let mut h: Vec<String> = EMA_FIXED.iter().map(|s| s.to_string()).collect();
    h.extend((1..=EMOTIONS).map(|i| format!("emo_{i}")));
    h.extend(EMA_SUBSTANCE.iter().map(|s| s.to_string()));
    h
}

/// Seconds since the Unix epoch. Offsets are honored; naive times are taken as UTC.
pub fn parse_timestamp(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp_millis() as f64 / 1000.0);
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc().timestamp_millis() as f64 / 1000.0);
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmaRow {
    pub line: u64,
    pub subject_id: String,
    pub timestamp: f64,
    pub completed: bool,
    pub emotions: Vec<Option<f64>>,
    pub marijuana: Option<f64>,
    pub cigarettes: CigaretteCount,
    pub cig_times: ReportTimes,
    pub puffs: u32,
    pub vape_times: ReportTimes,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreatmentRow {
    pub line: u64,
    pub subject_id: String,
    pub timestamp: f64,
    pub treated: bool,
}

/// A reported time that was moved, with times in days from study start.
#[derive(Debug, Clone, PartialEq)]
pub struct Flag {
    pub subject_id: String,
    pub ema_time: f64,
    pub field: String,
    pub reported: f64,
    pub used: f64,
    pub reason: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOutput {
    pub dataset: Dataset,
    pub exclusions: Vec<(String, Exclusion)>,
    pub flags: Vec<Flag>,
}

struct Columns {
    idx: BTreeMap<String, usize>,
}

impl Columns {
    fn new(header: &csv::StringRecord, expected: &[String], file: &'static str) -> Result<Columns> {
        let mut idx = BTreeMap::new();
        for (i, h) in header.iter().enumerate() {
            let h = h.trim();
            if !expected.iter().any(|e| e == h) {
                return Err(Error::schema(format!("{file}:1"), format!("unknown column {h:?}")));
            }
            if idx.insert(h.to_string(), i).is_some() {
                return Err(Error::schema(format!("{file}:1"), format!("duplicate column {h:?}")));
            }
        }
        if let Some(m) = expected.iter().find(|e| !idx.contains_key(*e)) {
            return Err(Error::schema(format!("{file}:1"), format!("missing column {m:?}")));
        }
        Ok(Columns { idx })
    }

    fn get<'r>(&self, rec: &'r csv::StringRecord, name: &str) -> &'r str {
        rec.get(self.idx[name]).unwrap_or("").trim()
    }
}

fn loc(file: &str, line: u64) -> String {
    format!("{file}:{line}")
}

fn flag_bool(s: &str, col: &str, file: &str, line: u64) -> Result<bool> {
    match s {
        "1" | "true" | "TRUE" => Ok(true),
        "0" | "false" | "FALSE" => Ok(false),
        _ => Err(Error::schema(loc(file, line), format!("column {col} must be 0 or 1"))),
    }
}

fn opt_time(s: &str, col: &str, file: &str, line: u64) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    parse_timestamp(s)
        .map(Some)
        .ok_or_else(|| Error::schema(loc(file, line), format!("column {col} is not an ISO-8601 timestamp")))
}

fn req_time(s: &str, col: &str, file: &str, line: u64) -> Result<f64> {
    opt_time(s, col, file, line)?.ok_or_else(|| Error::schema(loc(file, line), format!("column {col} is empty")))
}

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new().flexible(false).from_reader(text.as_bytes())
}

fn is_blank(text: &str) -> bool {
    text.trim().is_empty()
}

pub fn parse_ema(text: &str) -> Result<Vec<EmaRow>> {
    const F: &str = "ema.csv";
    if is_blank(text) {
        return Ok(Vec::new());
    }
    let mut rdr = reader(text);
    let cols = Columns::new(&rdr.headers()?.clone(), &ema_header(), F)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::schema(F, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let g = |c: &str| cols.get(&rec, c);
        let subject_id = g("subject_id").to_string();
        if subject_id.is_empty() {
            return Err(Error::schema(loc(F, line), "empty subject_id"));
        }
        let timestamp = req_time(g("timestamp"), "timestamp", F, line)?;
        let completed = flag_bool(g("completed"), "completed", F, line)?;
        let mut emotions = Vec::with_capacity(EMOTIONS);
        for i in 1..=EMOTIONS {
            let col = format!("emo_{i}");
            let s = g(&col);
            emotions.push(if s.is_empty() {
                None
            } else {
                match s.parse::<u8>() {
                    Ok(v @ 1..=5) => Some(v as f64),
                    _ => return Err(Error::schema(loc(F, line), format!("column {col} must be an integer 1-5"))),
                }
            });
        }
        let cigarettes = match g("cig_count") {
            "" | "0" => CigaretteCount::None,
            "partial" => CigaretteCount::Count(1),
            ">10" | "more_than_10" => CigaretteCount::MoreThanTen,
            s => match s.parse::<u32>() {
                Ok(n @ 1..=10) => CigaretteCount::Count(n),
                _ => {
                    return Err(Error::schema(
                        loc(F, line),
                        "cig_count must be empty, 0-10, \"partial\" or \">10\"",
                    ))
                }
            },
        };
        let puffs = match g("puffs") {
            "" => 0,
            s => s
                .parse::<u32>()
                .map_err(|_| Error::schema(loc(F, line), "puffs must be a non-negative integer"))?,
        };
        let times = |a: &str, b: &str, c: &str| -> Result<ReportTimes> {
            Ok(ReportTimes {
                single: opt_time(g(a), a, F, line)?,
                first: opt_time(g(b), b, F, line)?,
                last: opt_time(g(c), c, F, line)?,
            })
        };
        out.push(EmaRow {
            line,
            subject_id,
            timestamp,
            completed,
            emotions,
            marijuana: opt_time(g("marijuana_time"), "marijuana_time", F, line)?,
            cigarettes,
            cig_times: times("cig_time", "cig_first", "cig_last")?,
            puffs,
            vape_times: times("vape_time", "vape_first", "vape_last")?,
        });
    }
    Ok(out)
}

pub fn parse_treatments(text: &str) -> Result<Vec<TreatmentRow>> {
    const F: &str = "treatments_raw.csv";
    if is_blank(text) {
        return Ok(Vec::new());
    }
    let mut rdr = reader(text);
    let expected: Vec<String> = ["subject_id", "timestamp", "treated"].iter().map(|s| s.to_string()).collect();
    let cols = Columns::new(&rdr.headers()?.clone(), &expected, F)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::schema(F, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let subject_id = cols.get(&rec, "subject_id").to_string();
        if subject_id.is_empty() {
            return Err(Error::schema(loc(F, line), "empty subject_id"));
        }
        out.push(TreatmentRow {
            line,
            subject_id,
            timestamp: req_time(cols.get(&rec, "timestamp"), "timestamp", F, line)?,
            treated: flag_bool(cols.get(&rec, "treated"), "treated", F, line)?,
        });
    }
    Ok(out)
}

/// Optional per-subject study start times.
pub fn parse_starts(text: &str) -> Result<BTreeMap<String, f64>> {
    const F: &str = "starts.csv";
    let mut out = BTreeMap::new();
    if is_blank(text) {
        return Ok(out);
    }
    let mut rdr = reader(text);
    let expected: Vec<String> = ["subject_id", "study_start"].iter().map(|s| s.to_string()).collect();
    let cols = Columns::new(&rdr.headers()?.clone(), &expected, F)?;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::schema(F, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = cols.get(&rec, "subject_id").to_string();
        let t = req_time(cols.get(&rec, "study_start"), "study_start", F, line)?;
        if out.insert(id.clone(), t).is_some() {
            return Err(Error::schema(loc(F, line), format!("duplicate subject {id}")));
        }
    }
    Ok(out)
}

#[derive(Default)]
struct Raw<'a> {
    ema: Vec<&'a EmaRow>,
    trt: Vec<&'a TreatmentRow>,
}

/// Clamps a reported time (seconds) into [lo, hi], recording any move.
fn clamp_into(t: f64, lo: f64, hi: f64, field: &str, ctx: &mut FlagCtx) -> f64 {
    let used = t.clamp(lo, hi);
    if used != t {
        ctx.push(field, t, used, "outside_report_interval");
    }
    used
}

struct FlagCtx<'a> {
    id: &'a str,
    start: f64,
    ema: f64,
    flags: &'a mut Vec<Flag>,
}

impl FlagCtx<'_> {
    fn push(&mut self, field: &str, reported: f64, used: f64, reason: &'static str) {
        let d = |s: f64| (s - self.start) / SECS_PER_DAY;
        self.flags.push(Flag {
            subject_id: self.id.to_string(),
            ema_time: d(self.ema),
            field: field.to_string(),
            reported: d(reported),
            used: d(used),
            reason,
        });
    }
}

fn clamp_times(t: &ReportTimes, prefix: &str, lo: f64, hi: f64, ctx: &mut FlagCtx) -> ReportTimes {
    let mut c = |v: Option<f64>, suffix: &str| v.map(|x| clamp_into(x, lo, hi, &format!("{prefix}_{suffix}"), ctx));
    ReportTimes { single: c(t.single, "time"), first: c(t.first, "first"), last: c(t.last, "last") }
}

/// Events (seconds) from one completed EMA whose recall window is [lo, hi].
fn ema_events(row: &EmaRow, lo: f64, ctx: &mut FlagCtx) -> Result<Vec<f64>> {
    let hi = row.timestamp;
    let at = |e: Error| match e {
        Error::Ordering(m) | Error::InvalidInput(m) => Error::schema(loc("ema.csv", row.line), m),
        other => other,
    };
    let mut ev = Vec::new();
    if let Some(m) = row.marijuana {
        ev.push(clamp_into(m, lo, hi, "marijuana_time", ctx));
    }
    // Order checks use the reported times; clamping happens afterwards.
    let cig = cigarettes_to_events(row.cigarettes, &row.cig_times).map_err(at)?;
    if !cig.is_empty() {
        ev.extend(cigarettes_to_events(row.cigarettes, &clamp_times(&row.cig_times, "cig", lo, hi, ctx)).map_err(at)?);
    }
    let vape = puffs_to_events(row.puffs, &row.vape_times).map_err(at)?;
    if !vape.is_empty() {
        ev.extend(puffs_to_events(row.puffs, &clamp_times(&row.vape_times, "vape", lo, hi, ctx)).map_err(at)?);
    }
    Ok(ev)
}

/// Builds modeling tables. `starts` overrides the default anchor, which is a
/// subject's earliest EMA or treatment row.
pub fn build_dataset(ema: &[EmaRow], treatments: &[TreatmentRow], starts: &BTreeMap<String, f64>) -> Result<IngestOutput> {
    let mut by: BTreeMap<&str, Raw> = BTreeMap::new();
    for r in ema {
        by.entry(&r.subject_id).or_default().ema.push(r);
    }
    for r in treatments {
        by.entry(&r.subject_id).or_default().trt.push(r);
    }
    let mut subjects = Vec::new();
    let mut exclusions = Vec::new();
    let mut flags = Vec::new();
    for (id, mut raw) in by {
        raw.ema.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        raw.trt.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        for w in raw.ema.windows(2) {
            if w[0].timestamp == w[1].timestamp {
                return Err(Error::schema(loc("ema.csv", w[1].line), format!("duplicate EMA time for subject {id}")));
            }
        }
        for w in raw.trt.windows(2) {
            if w[0].timestamp == w[1].timestamp {
                return Err(Error::schema(
                    loc("treatments_raw.csv", w[1].line),
                    format!("duplicate treatment time for subject {id}"),
                ));
            }
        }
        let default_start = raw
            .ema
            .iter()
            .map(|r| r.timestamp)
            .chain(raw.trt.iter().map(|r| r.timestamp))
            .fold(f64::INFINITY, f64::min);
        let start = starts.get(id).copied().unwrap_or(default_start);
        let day = |s: f64| (s - start) / SECS_PER_DAY;
        if let Some(r) = raw.ema.iter().find(|r| r.timestamp < start) {
            return Err(Error::schema(loc("ema.csv", r.line), "EMA precedes the subject's study start"));
        }
        if let Some(r) = raw.trt.iter().find(|r| r.timestamp < start) {
            return Err(Error::schema(loc("treatments_raw.csv", r.line), "treatment precedes the study start"));
        }
        let done: Vec<&EmaRow> = raw.ema.iter().copied().filter(|r| r.completed).collect();
        let completed_days: Vec<f64> = done.iter().map(|r| day(r.timestamp)).collect();
        let censor_time = match apply_censoring(&completed_days)? {
            Censoring::Excluded(reason) => {
                exclusions.push((id.to_string(), reason));
                continue;
            }
            Censoring::Included { censor_time } => censor_time,
        };
        let mut events = Vec::new();
        let mut observations = Vec::new();
        let mut lo = start;
        for r in &done {
            let mut ctx = FlagCtx { id, start, ema: r.timestamp, flags: &mut flags };
            let ev = ema_events(r, lo, &mut ctx)?;
            lo = r.timestamp;
            if day(r.timestamp) > censor_time {
                continue;
            }
            events.extend(ev.into_iter().map(|t| (t, r.timestamp)));
            observations.push(Observation { time: day(r.timestamp), y: r.emotions.clone() });
        }
        events.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut kept: Vec<f64> = Vec::with_capacity(events.len());
        let mut last = start;
        for (t, ema_ts) in events {
            let mut used = t;
            if used <= last {
                used = last + TIE_SHIFT_SECS;
                FlagCtx { id, start, ema: ema_ts, flags: &mut flags }.push("event", t, used, "tied_event_shifted");
            }
            last = used;
            kept.push(day(used));
        }
        kept.retain(|&t| t <= censor_time);
        subjects.push(SubjectData {
            id: id.to_string(),
            observations,
            treatments: raw.trt.iter().filter(|r| r.treated).map(|r| day(r.timestamp)).collect(),
            events: kept,
            censor_time,
            at_risk_from: 0.0,
            covariates: Vec::new(),
        });
    }
    let dataset = Dataset { k: EMOTIONS, subjects };
    dataset.validate()?;
    Ok(IngestOutput { dataset, exclusions, flags })
}

/// Parses the raw files and builds the tables.
pub fn ingest(ema: &str, treatments: &str, starts: Option<&str>) -> Result<IngestOutput> {
    let starts = match starts {
        Some(s) => parse_starts(s)?,
        None => BTreeMap::new(),
    };
    build_dataset(&parse_ema(ema)?, &parse_treatments(treatments)?, &starts)
}

/// Quotes a CSV field when it needs it.
fn field(v: &str) -> std::borrow::Cow<'_, str> {
    if v.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", v.replace('"', "\"\"")).into()
    } else {
        v.into()
    }
}

pub fn exclusions_csv(out: &IngestOutput) -> String {
    let mut s = String::from("subject_id,reason\n");
    for (id, r) in &out.exclusions {
        let _ = writeln!(s, "{},{}", field(id), r.code());
    }
    s
}

pub fn flags_csv(out: &IngestOutput) -> String {
    let mut s = String::from("subject_id,ema_time,field,reported,used,reason\n");
    for f in &out.flags {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            field(&f.subject_id),
            fmt_f64(f.ema_time),
            f.field,
            fmt_f64(f.reported),
            fmt_f64(f.used),
            f.reason
        );
    }
    s
}
