//! Command-line front end: data generation, sampling, training, prediction,
//! evaluation and gradient verification.
//!
//! Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage or
//! configuration error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use pasurf_core::checkpoint::AnyModel;
use pasurf_core::datagen::generate_dataset;
use pasurf_core::metrics::{evaluate, MetricReport, VelocityMode};
use pasurf_core::model::ModelState;
use pasurf_core::pointcloud::{load_clouds, load_dataset, load_sample, save_fields, save_sample, SampleRecord, Split};
use pasurf_core::sampling::{sample, write_index_file, SamplingMethod};
use pasurf_core::training::{grad_check, train, FINAL_CHECKPOINT, TRAIN_LOSS_CSV};
use pasurf_core::{Precision, Real};

pub mod config;

pub use config::{Profile, RunConfig};

pub const INDEX_FILE: &str = "indices.txt";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_TABLE: &str = "metrics.txt";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] pasurf_core::Error),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(_) | CliError::Failed(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "pasurf",
    version,
    about = "Point-cloud aerodynamic surrogate",
    after_help = "Settings are resolved as: built-in defaults, then the --config JSON file, then flags."
)]
pub struct Cli {
    /// JSON run configuration (flat keys; unknown keys are rejected).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed for every stochastic step.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Parameter precision for training and inference.
    #[arg(long, global = true)]
    pub precision: Option<Precision>,
    /// Print the fully resolved configuration as JSON and exit.
    #[arg(long, global = true)]
    pub print_config: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic ellipsoid dataset.
    GenData(GenDataArgs),
    /// Downsample one sample's surface cloud.
    Sample(SampleArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Predict fields and drag for one sample.
    Predict(PredictArgs),
    /// Score a checkpoint on a dataset split.
    Evaluate(EvaluateArgs),
    /// Compare analytic gradients with finite differences.
    GradCheck(GradCheckArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of samples.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub n_surface: Option<usize>,
    #[arg(long)]
    pub n_volume: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Input sample directory.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output directory for the index file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub method: Option<SamplingMethod>,
    /// Number of surface points to keep.
    #[arg(long)]
    pub n: Option<usize>,
    /// Also write the reduced sample files next to the index file.
    #[arg(long)]
    pub reduced: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory containing manifest.json.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for checkpoints and loss logs.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub profile: Option<Profile>,
    /// Downsample every surface to this many points before training.
    #[arg(long)]
    pub sample_points: Option<usize>,
    #[arg(long)]
    pub sample_method: Option<SamplingMethod>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Sample directory (targets are not needed).
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output directory for pressure.txt, velocity.txt and cd.txt.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    All,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "val")]
    pub split: SplitArg,
    /// Directory for metrics.json and metrics.txt; the table is printed
    /// either way.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub velocity_mode: Option<VelocityMode>,
    #[arg(long)]
    pub sample_points: Option<usize>,
    #[arg(long)]
    pub sample_method: Option<SamplingMethod>,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    #[arg(long)]
    pub tolerance: Option<f64>,
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                2
            } else {
                let _ = write!(out, "{text}");
                0
            };
        }
    };
    match execute(&cli, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

/// Defaults, then the config file, then flags.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut c = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    if let Some(p) = cli.precision {
        c.precision = p;
    }
    match &cli.command {
        Command::GenData(a) => {
            set(&mut c.n_samples, a.n);
            set(&mut c.n_surface, a.n_surface);
            set(&mut c.n_volume, a.n_volume);
        }
        Command::Sample(a) => {
            set(&mut c.sampling_method, a.method);
            set(&mut c.sampling_points, a.n);
            if c.sampling_points == 0 {
                return Err(CliError::Config("sample needs --n or sampling_points > 0".into()));
            }
        }
        Command::Train(a) => {
            set(&mut c.epochs, a.epochs);
            set(&mut c.learning_rate, a.lr);
            set(&mut c.profile, a.profile);
            set(&mut c.sampling_points, a.sample_points);
            set(&mut c.sampling_method, a.sample_method);
        }
        Command::Evaluate(a) => {
            set(&mut c.velocity_mode, a.velocity_mode);
            set(&mut c.sampling_points, a.sample_points);
            set(&mut c.sampling_method, a.sample_method);
        }
        Command::GradCheck(a) => set(&mut c.grad_tolerance, a.tolerance),
        Command::Predict(_) => {}
    }
    c.validate()?;
    Ok(c)
}

fn set<T>(dst: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *dst = v;
    }
}

fn execute(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let cfg = resolve_config(cli)?;
    if cli.print_config {
        write!(out, "{}", cfg.to_json()).map_err(io_failed)?;
        return Ok(());
    }
    match &cli.command {
        Command::GenData(a) => cmd_gen_data(&cfg, a, out),
        Command::Sample(a) => cmd_sample(&cfg, a, out),
        Command::Train(a) => cmd_train(&cfg, a, out, err),
        Command::Predict(a) => cmd_predict(a, out),
        Command::Evaluate(a) => cmd_evaluate(&cfg, a, out),
        Command::GradCheck(_) => cmd_grad_check(&cfg, out),
    }
}

fn io_failed(e: std::io::Error) -> CliError {
    CliError::Failed(format!("writing output: {e}"))
}

fn cmd_gen_data(cfg: &RunConfig, a: &GenDataArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let manifest = generate_dataset(&cfg.dataset_spec(), &a.out)?;
    writeln!(out, "{}", a.out.join(pasurf_core::pointcloud::MANIFEST_FILE).display()).map_err(io_failed)?;
    let _ = manifest;
    Ok(())
}

fn cmd_sample(cfg: &RunConfig, a: &SampleArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let rec = load_sample(&a.input)?;
    let idx = sample(&rec.surface, &cfg.sampling_config(cfg.sampling_points, cfg.seed))?;
    fs::create_dir_all(&a.out).map_err(|e| pasurf_core::Error::Io { path: a.out.clone(), source: e })?;
    let path = a.out.join(INDEX_FILE);
    fs::write(&path, write_index_file(&idx)).map_err(|e| pasurf_core::Error::Io { path: path.clone(), source: e })?;
    if a.reduced {
        save_sample(&rec.select_surface(&idx), &a.out)?;
    }
    writeln!(out, "{} ({} of {} points)", path.display(), idx.len(), rec.surface.len()).map_err(io_failed)?;
    Ok(())
}

/// Applies the configured surface downsampling, seeded per sample from the
/// root seed and the sample position.
pub fn downsample(records: Vec<SampleRecord>, cfg: &RunConfig) -> Result<Vec<SampleRecord>, CliError> {
    if cfg.sampling_points == 0 {
        return Ok(records);
    }
    records
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let seed = pasurf_core::rng::SplitMix64::derive(cfg.seed, i as u64).next_u64();
            let idx = sample(&r.surface, &cfg.sampling_config(cfg.sampling_points, seed))?;
            Ok(r.select_surface(&idx))
        })
        .collect()
}

fn cmd_train(cfg: &RunConfig, a: &TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let ds = load_dataset(&a.data)?;
    let train_set = downsample(ds.split(Split::Train), cfg)?;
    let val_set = downsample(ds.split(Split::Val), cfg)?;
    if train_set.is_empty() {
        return Err(CliError::Failed("dataset has no training samples".into()));
    }
    writeln!(err, "training on {} samples, validating on {}", train_set.len(), val_set.len()).map_err(io_failed)?;
    fs::create_dir_all(&a.out).map_err(|e| pasurf_core::Error::Io { path: a.out.clone(), source: e })?;
    fs::write(a.out.join("config.json"), cfg.to_json())
        .map_err(|e| pasurf_core::Error::Io { path: a.out.join("config.json"), source: e })?;
    let mut log = |t: &pasurf_core::training::LossRow, v: Option<&pasurf_core::training::LossRow>| {
        let _ = match v {
            Some(v) => writeln!(
                err,
                "epoch {:>4} step {:>6} train {:.6e} val {:.6e}",
                t.epoch, t.step, t.loss.total, v.loss.total
            ),
            None => writeln!(err, "epoch {:>4} step {:>6} train {:.6e}", t.epoch, t.step, t.loss.total),
        };
    };
    let (mcfg, tcfg) = (cfg.model_config(), cfg.train_config());
    match cfg.precision {
        Precision::F32 => {
            train::<f32>(&train_set, &val_set, &mcfg, &tcfg, Some(&a.out), &mut log)?;
        }
        Precision::F64 => {
            train::<f64>(&train_set, &val_set, &mcfg, &tcfg, Some(&a.out), &mut log)?;
        }
    }
    writeln!(out, "{}", a.out.join(FINAL_CHECKPOINT).display()).map_err(io_failed)?;
    writeln!(out, "{}", a.out.join(TRAIN_LOSS_CSV).display()).map_err(io_failed)?;
    Ok(())
}

fn cmd_predict(a: &PredictArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let model = AnyModel::load(&a.checkpoint)?;
    let (surface, volume) = load_clouds(&a.input)?;
    let pred = model.predict(&surface, &volume)?;
    save_fields(&pred.pressure, &pred.velocity, pred.drag, &a.out)?;
    writeln!(out, "{}", a.out.display()).map_err(io_failed)?;
    Ok(())
}

fn report_for<T: Real>(
    m: &ModelState<T>,
    samples: &[SampleRecord],
    mode: VelocityMode,
) -> Result<MetricReport, CliError> {
    Ok(evaluate(m, samples, mode)?)
}

fn cmd_evaluate(cfg: &RunConfig, a: &EvaluateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let model = AnyModel::load(&a.checkpoint)?;
    let ds = load_dataset(&a.data)?;
    let samples = match a.split {
        SplitArg::Train => ds.split(Split::Train),
        SplitArg::Val => ds.split(Split::Val),
        SplitArg::All => ds.all(),
    };
    if samples.is_empty() {
        return Err(CliError::Failed(format!("split {:?} is empty", a.split)));
    }
    let samples = downsample(samples, cfg)?;
    let report = match &model {
        AnyModel::F32(m) => report_for(m, &samples, cfg.velocity_mode)?,
        AnyModel::F64(m) => report_for(m, &samples, cfg.velocity_mode)?,
    };
    if let Some(dir) = &a.out {
        write_report(&report, dir)?;
    }
    write!(out, "{}", report.to_table()).map_err(io_failed)?;
    Ok(())
}

pub fn write_report(report: &MetricReport, dir: &Path) -> Result<(), CliError> {
    let io = |p: PathBuf| move |e| CliError::Core(pasurf_core::Error::Io { path: p, source: e });
    fs::create_dir_all(dir).map_err(io(dir.to_path_buf()))?;
    fs::write(dir.join(METRICS_JSON), report.to_json()).map_err(io(dir.join(METRICS_JSON)))?;
    fs::write(dir.join(METRICS_TABLE), report.to_table()).map_err(io(dir.join(METRICS_TABLE)))?;
    Ok(())
}

fn cmd_grad_check(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    // Finite differences at h = 1e-5 are meaningless in f32, so this always
    // runs in f64 whatever --precision says.
    let report = grad_check(&cfg.grad_check_config())?;
    for t in &report.tensors {
        writeln!(out, "{:<40} {:>6} {:.3e}", t.name, t.len, t.rel_error).map_err(io_failed)?;
    }
    writeln!(out, "max relative error {:.3e} (tolerance {:e})", report.max_rel_error, report.tolerance)
        .map_err(io_failed)?;
    if report.passed {
        writeln!(out, "PASS").map_err(io_failed)?;
        Ok(())
    } else {
        writeln!(out, "FAIL").map_err(io_failed)?;
        Err(CliError::Failed("gradient check failed".into()))
    }
}
