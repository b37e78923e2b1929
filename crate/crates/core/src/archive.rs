//! On-disk posterior archives: samples.csv, latent/ and manifest.json.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bundle::{fmt_f64, parse_num};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::params::ParameterVector;
use crate::sampler::{ChainOutput, LatentDraw, PosteriorArchive, SamplerConfig};

pub const SAMPLES: &str = "samples.csv";
pub const LATENT_DIR: &str = "latent";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ChainMeta {
    chain: usize,
    acceptance: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    model: ModelConfig,
    sampler: SamplerConfig,
    param_names: Vec<String>,
    subject_ids: Vec<String>,
    latent_times: Vec<Vec<f64>>,
    initial: ParameterVector,
    chains: Vec<ChainMeta>,
    rhat: BTreeMap<String, f64>,
    /// Free-form provenance (data path, command line).
    #[serde(default)]
    extra: serde_json::Value,
}

fn latent_file(index: usize) -> String {
    format!("subject_{index:04}.csv")
}

fn writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new())
}

fn into_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidInput(e.to_string()))
}

pub fn samples_csv(archive: &PosteriorArchive) -> Result<String> {
    let mut w = writer();
    let mut header = vec!["chain".to_string(), "iteration".to_string(), "log_posterior".to_string()];
    header.extend(archive.param_names.iter().cloned());
    w.write_record(&header)?;
    for c in &archive.chains {
        for ((it, lp), d) in c.iterations.iter().zip(&c.log_posterior).zip(&c.draws) {
            let mut row = vec![c.chain.to_string(), it.to_string(), fmt_f64(*lp)];
            row.extend(d.iter().map(|v| fmt_f64(*v)));
            w.write_record(&row)?;
        }
    }
    into_string(w)
}

/// Long-format latent draws for one subject.
pub fn latent_csv(archive: &PosteriorArchive, subject: usize) -> Result<String> {
    let p = archive.model.p;
    let mut w = writer();
    let mut header = vec!["chain".to_string(), "iteration".to_string(), "time".to_string()];
    header.extend((1..=p).map(|i| format!("eta{i}")));
    w.write_record(&header)?;
    let times = &archive.latent_times[subject];
    for c in &archive.chains {
        for draw in &c.latent {
            let vals = &draw.values[subject];
            for (j, t) in times.iter().enumerate() {
                let mut row = vec![c.chain.to_string(), draw.iteration.to_string(), fmt_f64(*t)];
                row.extend(vals[j * p..(j + 1) * p].iter().map(|v| fmt_f64(*v)));
                w.write_record(&row)?;
            }
        }
    }
    into_string(w)
}

pub fn write_archive(dir: &Path, archive: &PosteriorArchive, extra: serde_json::Value) -> Result<()> {
    fs::create_dir_all(dir.join(LATENT_DIR))?;
    fs::write(dir.join(SAMPLES), samples_csv(archive)?)?;
    for i in 0..archive.subject_ids.len() {
        fs::write(dir.join(LATENT_DIR).join(latent_file(i)), latent_csv(archive, i)?)?;
    }
    let manifest = Manifest {
        model: archive.model.clone(),
        sampler: archive.sampler.clone(),
        param_names: archive.param_names.clone(),
        subject_ids: archive.subject_ids.clone(),
        latent_times: archive.latent_times.clone(),
        initial: archive.initial.clone(),
        chains: archive
            .chains
            .iter()
            .map(|c| ChainMeta { chain: c.chain, acceptance: c.acceptance.clone() })
            .collect(),
        rhat: archive.rhat.clone(),
        extra,
    };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

/// (chain, iteration, log posterior or time, values).
pub type Row = (usize, usize, f64, Vec<f64>);

/// Rows of samples.csv as (chain, iteration, log posterior, values).
pub fn parse_samples(text: &str, names: &[String]) -> Result<Vec<Row>> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = rdr.headers()?.clone();
    let mut expected = vec!["chain", "iteration", "log_posterior"];
    expected.extend(names.iter().map(String::as_str));
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(Error::schema(format!("{SAMPLES}:1"), "header does not match the manifest"));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != expected.len() {
            return Err(Error::schema(format!("{SAMPLES}:{line}"), "wrong number of fields"));
        }
        let int = |i: usize, col: &str| -> Result<usize> {
            rec[i]
                .parse()
                .map_err(|_| Error::schema(format!("{SAMPLES}:{line}"), format!("column {col} is not an integer")))
        };
        let chain = int(0, "chain")?;
        let iteration = int(1, "iteration")?;
        // Non-finite log posteriors never occur in stored draws.
        let lp = parse_num(&rec[2], SAMPLES, line, "log_posterior")?;
        let vals = (0..names.len())
            .map(|i| parse_num(&rec[3 + i], SAMPLES, line, &names[i]))
            .collect::<Result<_>>()?;
        out.push((chain, iteration, lp, vals));
    }
    Ok(out)
}

/// Latent rows for one subject as (chain, iteration, time, values).
pub fn parse_latent(text: &str, p: usize) -> Result<Vec<Row>> {
    let file = "latent";
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = rdr.headers()?.clone();
    if header.len() != 3 + p || &header[0] != "chain" || &header[1] != "iteration" || &header[2] != "time" {
        return Err(Error::schema(format!("{file}:1"), "unexpected latent header"));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 3 + p {
            return Err(Error::schema(format!("{file}:{line}"), "wrong number of fields"));
        }
        let int = |i: usize| -> Result<usize> {
            rec[i].parse().map_err(|_| Error::schema(format!("{file}:{line}"), "expected an integer"))
        };
        let vals = (0..p).map(|i| parse_num(&rec[3 + i], file, line, "eta")).collect::<Result<_>>()?;
        out.push((int(0)?, int(1)?, parse_num(&rec[2], file, line, "time")?, vals));
    }
    Ok(out)
}

pub fn read_archive(dir: &Path) -> Result<PosteriorArchive> {
    let mpath = dir.join(MANIFEST);
    let text = fs::read_to_string(&mpath)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", mpath.display()))))?;
    let m: Manifest = serde_json::from_str(&text)?;
    let rows = parse_samples(&fs::read_to_string(dir.join(SAMPLES))?, &m.param_names)?;
    let mut chains: Vec<ChainOutput> = m
        .chains
        .iter()
        .map(|c| ChainOutput {
            chain: c.chain,
            iterations: Vec::new(),
            draws: Vec::new(),
            log_posterior: Vec::new(),
            acceptance: c.acceptance.clone(),
            latent: Vec::new(),
        })
        .collect();
    let pos = |chains: &[ChainOutput], id: usize| -> Result<usize> {
        chains
            .iter()
            .position(|c| c.chain == id)
            .ok_or_else(|| Error::DataInconsistency(format!("chain {id} missing from manifest")))
    };
    for (chain, it, lp, vals) in rows {
        let c = pos(&chains, chain)?;
        chains[c].iterations.push(it);
        chains[c].log_posterior.push(lp);
        chains[c].draws.push(vals);
    }
    let p = m.model.p;
    let n_sub = m.subject_ids.len();
    for i in 0..n_sub {
        let path = dir.join(LATENT_DIR).join(latent_file(i));
        if !path.exists() {
            continue;
        }
        let n_t = m.latent_times[i].len();
        let rows = parse_latent(&fs::read_to_string(&path)?, p)?;
        let mut k = 0;
        while k < rows.len() {
            let (chain, it) = (rows[k].0, rows[k].1);
            if k + n_t > rows.len() {
                return Err(Error::DataInconsistency(format!("truncated latent draw in {}", path.display())));
            }
            let mut vals = Vec::with_capacity(n_t * p);
            for r in &rows[k..k + n_t] {
                if r.0 != chain || r.1 != it {
                    return Err(Error::DataInconsistency(format!("ragged latent draw in {}", path.display())));
                }
                vals.extend(&r.3);
            }
            k += n_t;
            let c = pos(&chains, chain)?;
            let draws = &mut chains[c].latent;
            match draws.iter_mut().find(|d| d.iteration == it) {
                Some(d) => {
                    if d.values.len() != i {
                        return Err(Error::DataInconsistency("latent files out of order".into()));
                    }
                    d.values.push(vals)
                }
                None if i == 0 => draws.push(LatentDraw { iteration: it, values: vec![vals] }),
                None => return Err(Error::DataInconsistency("latent draw missing for an earlier subject".into())),
            }
        }
    }
    for c in &chains {
        if c.latent.iter().any(|d| d.values.len() != n_sub) {
            return Err(Error::DataInconsistency("latent draws missing for some subjects".into()));
        }
    }
    Ok(PosteriorArchive {
        model: m.model,
        sampler: m.sampler,
        param_names: m.param_names,
        subject_ids: m.subject_ids,
        latent_times: m.latent_times,
        initial: m.initial,
        chains,
        rhat: m.rhat,
    })
}
