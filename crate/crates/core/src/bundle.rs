//! CSV dataset bundles: observations, events, treatments and subjects tables.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::data::{Dataset, Observation, SubjectData};
use crate::error::{Error, Result};

pub const OBSERVATIONS: &str = "observations.csv";
pub const EVENTS: &str = "events.csv";
pub const TREATMENTS: &str = "treatments.csv";
pub const SUBJECTS: &str = "subjects.csv";
pub const MANIFEST: &str = "manifest.json";

/// Shortest round-trip decimal form.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidInput(e.to_string()))
}

pub fn observations_csv(data: &Dataset) -> Result<String> {
    let mut w = writer();
    let mut header = vec!["subject_id".to_string(), "time".to_string()];
    header.extend((1..=data.k).map(|i| format!("y{i}")));
    w.write_record(&header)?;
    for s in &data.subjects {
        for o in &s.observations {
            let mut row = vec![s.id.clone(), fmt_f64(o.time)];
            row.extend(o.y.iter().map(|v| v.map(fmt_f64).unwrap_or_default()));
            w.write_record(&row)?;
        }
    }
    finish(w)
}

fn times_csv(data: &Dataset, pick: impl Fn(&SubjectData) -> &[f64]) -> Result<String> {
    let mut w = writer();
    w.write_record(["subject_id", "time"])?;
    for s in &data.subjects {
        for t in pick(s) {
            w.write_record([s.id.as_str(), &fmt_f64(*t)])?;
        }
    }
    finish(w)
}

pub fn events_csv(data: &Dataset) -> Result<String> {
    times_csv(data, |s| &s.events)
}

pub fn treatments_csv(data: &Dataset) -> Result<String> {
    times_csv(data, |s| &s.treatments)
}

pub fn subjects_csv(data: &Dataset) -> Result<String> {
    let mut w = writer();
    let mut header = vec!["subject_id".to_string(), "at_risk_from".to_string(), "censor_time".to_string()];
    header.extend((1..=data.n_covariates()).map(|i| format!("x{i}")));
    w.write_record(&header)?;
    for s in &data.subjects {
        let mut row = vec![s.id.clone(), fmt_f64(s.at_risk_from), fmt_f64(s.censor_time)];
        row.extend(s.covariates.iter().map(|v| fmt_f64(*v)));
        w.write_record(&row)?;
    }
    finish(w)
}

pub fn write_bundle(dir: &Path, data: &Dataset, manifest: &serde_json::Value) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(OBSERVATIONS), observations_csv(data)?)?;
    fs::write(dir.join(EVENTS), events_csv(data)?)?;
    fs::write(dir.join(TREATMENTS), treatments_csv(data)?)?;
    fs::write(dir.join(SUBJECTS), subjects_csv(data)?)?;
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(manifest)? + "\n")?;
    Ok(())
}

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes())
}

pub(crate) fn parse_num(field: &str, file: &str, line: u64, column: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::schema(format!("{file}:{line}"), format!("column {column}: '{field}' is not a number")))?;
    if !v.is_finite() {
        return Err(Error::schema(format!("{file}:{line}"), format!("column {column}: non-finite value")));
    }
    Ok(v)
}

fn expect_header(rdr: &mut csv::Reader<&[u8]>, file: &str, fixed: &[&str], prefix: &str) -> Result<usize> {
    let header = rdr.headers()?.clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < fixed.len() || cols[..fixed.len()] != *fixed {
        return Err(Error::schema(format!("{file}:1"), format!("header must start with {}", fixed.join(","))));
    }
    for (i, c) in cols[fixed.len()..].iter().enumerate() {
        if *c != format!("{prefix}{}", i + 1) {
            return Err(Error::schema(format!("{file}:1"), format!("unexpected column '{c}'")));
        }
    }
    Ok(cols.len() - fixed.len())
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

/// subjects.csv → skeleton subjects in file order.
pub fn parse_subjects(text: &str) -> Result<Vec<SubjectData>> {
    let mut rdr = reader(text);
    let n_cov = expect_header(&mut rdr, SUBJECTS, &["subject_id", "at_risk_from", "censor_time"], "x")?;
    let mut out: Vec<SubjectData> = Vec::new();
    let mut seen = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        if rec.len() != 3 + n_cov {
            return Err(Error::schema(format!("{SUBJECTS}:{line}"), "wrong number of fields"));
        }
        let id = rec[0].to_string();
        if id.is_empty() || seen.insert(id.clone(), ()).is_some() {
            return Err(Error::schema(format!("{SUBJECTS}:{line}"), "empty or duplicate subject_id"));
        }
        let covariates = (0..n_cov)
            .map(|i| parse_num(&rec[3 + i], SUBJECTS, line, &format!("x{}", i + 1)))
            .collect::<Result<_>>()?;
        out.push(SubjectData {
            id,
            observations: Vec::new(),
            treatments: Vec::new(),
            events: Vec::new(),
            at_risk_from: parse_num(&rec[1], SUBJECTS, line, "at_risk_from")?,
            censor_time: parse_num(&rec[2], SUBJECTS, line, "censor_time")?,
            covariates,
        });
    }
    Ok(out)
}

fn index_of(ids: &HashMap<String, usize>, id: &str, file: &str, line: u64) -> Result<usize> {
    ids.get(id)
        .copied()
        .ok_or_else(|| Error::schema(format!("{file}:{line}"), format!("unknown subject_id '{id}'")))
}

/// observations.csv → (subject_id, observation) rows; returns k.
pub fn parse_observations(text: &str) -> Result<(usize, Vec<(String, Observation)>)> {
    let mut rdr = reader(text);
    let k = expect_header(&mut rdr, OBSERVATIONS, &["subject_id", "time"], "y")?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        if rec.len() != 2 + k {
            return Err(Error::schema(format!("{OBSERVATIONS}:{line}"), "wrong number of fields"));
        }
        let time = parse_num(&rec[1], OBSERVATIONS, line, "time")?;
        let y = (0..k)
            .map(|i| {
                let f = rec[2 + i].trim();
                if f.is_empty() {
                    Ok(None)
                } else {
                    parse_num(f, OBSERVATIONS, line, &format!("y{}", i + 1)).map(Some)
                }
            })
            .collect::<Result<_>>()?;
        out.push((rec[0].to_string(), Observation { time, y }));
    }
    Ok((k, out))
}

/// Two-column (subject_id, time) tables.
pub fn parse_times(text: &str, file: &str) -> Result<Vec<(String, f64)>> {
    let mut rdr = reader(text);
    if expect_header(&mut rdr, file, &["subject_id", "time"], "")? != 0 {
        return Err(Error::schema(format!("{file}:1"), "expected exactly subject_id,time"));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        if rec.len() != 2 {
            return Err(Error::schema(format!("{file}:{line}"), "wrong number of fields"));
        }
        out.push((rec[0].to_string(), parse_num(&rec[1], file, line, "time")?));
    }
    Ok(out)
}

/// Assembles a dataset from the four table texts.
pub fn parse_bundle(observations: &str, events: &str, treatments: &str, subjects: &str) -> Result<Dataset> {
    let mut subs = parse_subjects(subjects)?;
    let ids: HashMap<String, usize> = subs.iter().enumerate().map(|(i, s)| (s.id.clone(), i)).collect();
    let (k, obs) = parse_observations(observations)?;
    for (line, (id, o)) in obs.into_iter().enumerate() {
        let i = index_of(&ids, &id, OBSERVATIONS, line as u64 + 2)?;
        subs[i].observations.push(o);
    }
    for (line, (id, t)) in parse_times(events, EVENTS)?.into_iter().enumerate() {
        let i = index_of(&ids, &id, EVENTS, line as u64 + 2)?;
        subs[i].events.push(t);
    }
    for (line, (id, t)) in parse_times(treatments, TREATMENTS)?.into_iter().enumerate() {
        let i = index_of(&ids, &id, TREATMENTS, line as u64 + 2)?;
        subs[i].treatments.push(t);
    }
    for s in &mut subs {
        s.observations.sort_by(|a, b| a.time.total_cmp(&b.time));
        s.events.sort_by(|a, b| a.total_cmp(b));
        s.treatments.sort_by(|a, b| a.total_cmp(b));
    }
    let data = Dataset { k, subjects: subs };
    data.validate()?;
    Ok(data)
}

pub fn read_bundle(dir: &Path) -> Result<Dataset> {
    let read = |name: &str| {
        fs::read_to_string(dir.join(name))
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.join(name).display()))))
    };
    parse_bundle(&read(OBSERVATIONS)?, &read(EVENTS)?, &read(TREATMENTS)?, &read(SUBJECTS)?)
}

pub fn read_manifest(dir: &Path) -> Result<Option<serde_json::Value>> {
    let p = dir.join(MANIFEST);
    if !p.exists() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_str(&fs::read_to_string(p)?)?))
}
