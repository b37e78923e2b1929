use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::json;

use mrt_joint::archive::{read_archive, write_archive};
use mrt_joint::bundle::{read_bundle, read_manifest, write_bundle};
use mrt_joint::ingest::{self, rules::RULES};
use mrt_joint::model::{Mechanism, ModelConfig};
use mrt_joint::ppc::{self, PpcConfig, PpcWindow};
use mrt_joint::sampler::{run_mcmc, SamplerConfig};
use mrt_joint::selection::{information_criteria, IcConfig};
use mrt_joint::simulate::{simulate_dataset, HazardForm, SimConfig};
use mrt_joint::{Error, ErrorClass};

#[derive(Parser)]
#[command(name = "mrtjoint", version, about = "Joint longitudinal and recurrent-event models for MRT data")]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum MechArg {
    Additive,
    Drift,
}

#[derive(Clone, Copy, ValueEnum)]
enum HazardArg {
    Model1,
    Model2,
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    /// 1 chain, 2000 iterations, 1000 burn-in.
    Default,
    /// 4 chains, 3000 iterations, 1000 burn-in, every 2nd latent draw kept.
    CaseStudy,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a dataset bundle.
    Simulate {
        /// JSON simulation config; flags below override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        setting: Option<u8>,
        #[arg(long, value_enum)]
        mechanism: Option<MechArg>,
        #[arg(long, value_enum)]
        hazard: Option<HazardArg>,
        #[arg(long)]
        subjects: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a model by MCMC and write a posterior archive.
    Fit {
        #[arg(long)]
        data: PathBuf,
        /// JSON with optional "model", "sampler" and "days_per_unit".
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        profile: Option<Profile>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// DIC and WAIC from a posterior archive.
    Ic {
        #[arg(long)]
        posterior: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Posterior predictive MCF comparison.
    Ppc {
        #[arg(long)]
        posterior: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// JSON with optional "windows" ([[start, stop], ...] in days), "seed" and "rolling".
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated window start days; windows run to --stop.
        #[arg(long, value_delimiter = ',')]
        starts: Option<Vec<f64>>,
        /// Window end in days; defaults to the end of follow-up.
        #[arg(long)]
        stop: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a dataset bundle from raw EMA and treatment exports.
    Ingest {
        #[arg(long)]
        ema: PathBuf,
        #[arg(long)]
        treatments: PathBuf,
        /// Optional per-subject study start times.
        #[arg(long)]
        starts: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Errors tagged with an exit code.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e.class() {
            ErrorClass::Usage => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numerical => 4,
        };
        Failure { code, err: e.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        Failure { code: 2, err }
    }
}

type Res<T> = std::result::Result<T, Failure>;

fn usage(msg: String) -> Failure {
    Failure { code: 2, err: anyhow!(msg) }
}

fn need(path: &Path, what: &str) -> Res<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(usage(format!("{what} {} does not exist", path.display())))
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Res<T> {
    need(path, "config")?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Res<()> {
    fs::write(path, text).map_err(|e| Failure::from(Error::Io(e)))
}

fn mkdir(dir: &Path) -> Res<()> {
    fs::create_dir_all(dir).map_err(|e| Failure::from(Error::Io(e)))
}

fn simulate(
    config: Option<PathBuf>,
    setting: Option<u8>,
    mechanism: Option<MechArg>,
    hazard: Option<HazardArg>,
    subjects: Option<usize>,
    seed: Option<u64>,
    out: &Path,
) -> Res<()> {
    let mut cfg = match &config {
        Some(p) => read_json::<SimConfig>(p)?,
        None => SimConfig::new(
            setting.ok_or_else(|| usage("--setting is required without --config".into()))?,
            Mechanism::Additive,
            HazardForm::Model1,
            0,
        ),
    };
    if let Some(s) = setting {
        cfg.setting = s;
    }
    if let Some(m) = mechanism {
        cfg.tx_mechanism = match m {
            MechArg::Additive => Mechanism::Additive,
            MechArg::Drift => Mechanism::Drift,
        };
    }
    if let Some(h) = hazard {
        cfg.hazard_form = match h {
            HazardArg::Model1 => HazardForm::Model1,
            HazardArg::Model2 => HazardForm::Model2,
        };
    }
    if let Some(n) = subjects {
        cfg.n_subjects = n;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let sim = simulate_dataset(&cfg)?;
    let manifest = json!({
        "command": "simulate",
        "config": cfg,
        "model": sim.model,
        "truth": sim.truth,
    });
    write_bundle(out, &sim.data, &manifest)?;
    log::info!("{} subjects, {} events", sim.data.subjects.len(), sim.data.total_events());
    Ok(())
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FitFile {
    #[serde(default)]
    model: Option<ModelConfig>,
    #[serde(default)]
    sampler: Option<SamplerConfig>,
    /// Rescales time so one model unit spans this many days.
    #[serde(default)]
    days_per_unit: Option<f64>,
}

fn fit(data_dir: &Path, config: Option<PathBuf>, profile: Option<Profile>, seed: Option<u64>, out: &Path) -> Res<()> {
    need(data_dir, "data directory")?;
    let file: FitFile = match &config {
        Some(p) => read_json(p)?,
        None => FitFile::default(),
    };
    let mut data = read_bundle(data_dir)?;
    let mut model = match (file.model, read_manifest(data_dir)?) {
        (Some(m), _) => m,
        (None, Some(m)) => match m.get("model") {
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| usage(format!("bundle manifest model: {e}")))?,
            None => return Err(usage("no model in the config or the bundle manifest".into())),
        },
        (None, None) => return Err(usage("no model in the config or the bundle manifest".into())),
    };
    if let Some(dpu) = file.days_per_unit {
        if !(dpu > 0.0 && dpu.is_finite()) {
            return Err(usage("days_per_unit must be positive".into()));
        }
        data = data.rescale_time(1.0 / dpu)?;
        model.days_per_unit = dpu;
        if let Some(h) = &mut model.hazard {
            h.quit_time = h.quit_time.map(|q| q / dpu);
        }
    }
    let mut sampler = file.sampler.unwrap_or_default();
    match profile {
        Some(Profile::CaseStudy) => {
            sampler.chains = 4;
            sampler.iterations = 3000;
            sampler.burn_in = 1000;
            sampler.latent_thin = 2;
        }
        Some(Profile::Default) => {
            sampler.chains = 1;
            sampler.iterations = 2000;
            sampler.burn_in = 1000;
        }
        None => {}
    }
    if let Some(s) = seed {
        sampler.seed = s;
    }
    let archive = run_mcmc(&data, &model, &sampler)?;
    let extra = json!({ "command": "fit", "data": data_dir, "days_per_unit": file.days_per_unit });
    write_archive(out, &archive, extra)?;
    for (name, acc) in archive.chains.iter().flat_map(|c| c.acceptance.iter()) {
        log::info!("acceptance {name}: {acc:.3}");
    }
    Ok(())
}

/// Data as the archive saw it: rescaled when the fit was.
fn data_for(archive_dir: &Path, data_dir: &Path) -> Res<mrt_joint::data::Dataset> {
    need(archive_dir, "posterior archive")?;
    need(data_dir, "data directory")?;
    let data = read_bundle(data_dir)?;
    let text = fs::read_to_string(archive_dir.join(mrt_joint::archive::MANIFEST)).map_err(Error::Io)?;
    let m: serde_json::Value = serde_json::from_str(&text).map_err(Error::Json)?;
    match m.pointer("/extra/days_per_unit").and_then(|v| v.as_f64()) {
        Some(dpu) => Ok(data.rescale_time(1.0 / dpu)?),
        None => Ok(data),
    }
}

fn ic(posterior: &Path, data_dir: &Path, config: Option<PathBuf>, seed: Option<u64>, out: &Path) -> Res<()> {
    let data = data_for(posterior, data_dir)?;
    let archive = read_archive(posterior)?;
    let mut cfg: IcConfig = match &config {
        Some(p) => read_json(p)?,
        None => IcConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let report = information_criteria(&data, &archive, &cfg)?;
    mkdir(out)?;
    let body = json!({
        "command": "ic",
        "posterior": posterior,
        "data": data_dir,
        "config": cfg,
        "report": report,
    });
    write(&out.join("ic_report.json"), &(serde_json::to_string_pretty(&body).map_err(Error::Json)? + "\n"))?;
    println!("DIC {:.3}  WAIC {:.3}  p_DIC {:.3}  p_WAIC {:.3}", report.dic, report.waic, report.p_dic, report.p_waic);
    Ok(())
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct PpcFile {
    #[serde(default)]
    windows: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    rolling: Option<f64>,
}

#[allow(clippy::too_many_arguments)]
fn run_ppc(
    posterior: &Path,
    data_dir: &Path,
    config: Option<PathBuf>,
    starts: Option<Vec<f64>>,
    stop: Option<f64>,
    seed: Option<u64>,
    out: &Path,
) -> Res<()> {
    let data = data_for(posterior, data_dir)?;
    let archive = read_archive(posterior)?;
    let file: PpcFile = match &config {
        Some(p) => read_json(p)?,
        None => PpcFile::default(),
    };
    let dpu = archive.model.days_per_unit;
    let end = data.subjects.iter().map(|s| s.censor_time).fold(0.0, f64::max);
    let stop_u = stop.map_or(end, |d| d / dpu);
    let windows: Vec<PpcWindow> = match (&file.windows, &starts) {
        (_, Some(st)) => st.iter().map(|d| PpcWindow::new(d / dpu, stop_u, end)).collect::<Result<_, _>>()?,
        (Some(ws), None) => ws.iter().map(|w| PpcWindow::new(w[0] / dpu, w[1] / dpu, end)).collect::<Result<_, _>>()?,
        (None, None) => ppc::default_windows(end, dpu)
            .into_iter()
            .map(|w| PpcWindow::new(w.t_start, stop_u, end))
            .collect::<Result<_, _>>()?,
    };
    if windows.is_empty() {
        return Err(usage("no PPC windows".into()));
    }
    let cfg = PpcConfig { seed: seed.or(file.seed).unwrap_or(0), rolling: file.rolling };
    let summaries = ppc::run_ppc(&data, &archive, &windows, &cfg)?;
    mkdir(out)?;
    write(&out.join("ppc_summary.csv"), &ppc::summary_csv(&summaries))?;
    let manifest = json!({
        "command": "ppc",
        "posterior": posterior,
        "data": data_dir,
        "windows": windows,
        "config": cfg,
        "samples": summaries.first().map(|s| s.n_samples),
    });
    write(&out.join("manifest.json"), &(serde_json::to_string_pretty(&manifest).map_err(Error::Json)? + "\n"))?;
    Ok(())
}

fn run_ingest(ema: &Path, treatments: &Path, starts: Option<PathBuf>, out: &Path) -> Res<()> {
    need(ema, "EMA file")?;
    need(treatments, "treatment file")?;
    let read = |p: &Path| fs::read_to_string(p).map_err(|e| Failure::from(Error::Io(e)));
    let ema_text = read(ema)?;
    let trt_text = read(treatments)?;
    let starts_text = match &starts {
        Some(p) => {
            need(p, "starts file")?;
            Some(read(p)?)
        }
        None => None,
    };
    let result = ingest::ingest(&ema_text, &trt_text, starts_text.as_deref())?;
    let manifest = json!({
        "command": "ingest",
        "ema": ema,
        "treatments": treatments,
        "starts": starts,
        "rules": RULES,
        "excluded": result.exclusions.len(),
    });
    write_bundle(out, &result.dataset, &manifest)?;
    write(&out.join("exclusions.csv"), &ingest::exclusions_csv(&result))?;
    write(&out.join("flags.csv"), &ingest::flags_csv(&result))?;
    Ok(())
}

fn run(cli: Cli) -> Res<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| usage(format!("thread pool: {e}")))?;
    }
    match cli.cmd {
        Cmd::Simulate { config, setting, mechanism, hazard, subjects, seed, out } => {
            simulate(config, setting, mechanism, hazard, subjects, seed, &out)
        }
        Cmd::Fit { data, config, profile, seed, out } => fit(&data, config, profile, seed, &out),
        Cmd::Ic { posterior, data, config, seed, out } => ic(&posterior, &data, config, seed, &out),
        Cmd::Ppc { posterior, data, config, starts, stop, seed, out } => {
            run_ppc(&posterior, &data, config, starts, stop, seed, &out)
        }
        Cmd::Ingest { ema, treatments, starts, out } => run_ingest(&ema, &treatments, starts, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}
