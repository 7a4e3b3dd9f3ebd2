//! Experiment commands: data generation, training, evaluation, beta sweeps
//! and report emission.

pub mod report;
pub mod sweep;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use smooth_traj::model::SmoothMode;
use smooth_traj::scenes::{
    generate_gap, generate_urban, load_scene_dir, save_scene_dir, split_critical, split_random, DataSplit, GenConfig, SceneSet,
    SplitMethod,
};
use smooth_traj::training::{evaluate, train_with, Checkpoint, EpochRecord, ModelForecaster, TrainConfig};
use smooth_traj::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Args(#[from] clap::Error),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    /// 0 for help and version output, 2 usage or configuration, 3 data or
    /// validation, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Args(e) => {
                if e.use_stderr() {
                    2
                } else {
                    0
                }
            }
            CliError::Core(e) => match e {
                Error::Config { .. } => 2,
                Error::Parse { .. } | Error::Validation(_) | Error::Io { .. } => 3,
                Error::Numeric(_) => 4,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "smooth-traj", version, about = "Trajectory forecasting experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic scenes as CSV.
    Gen(GenArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split.
    Eval(EvalArgs),
    /// Train and evaluate a grid of configurations.
    Sweep(sweep::SweepArgs),
    /// Render markdown tables and SVG plots from sweep results.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Urban,
    Gap,
}

#[derive(Debug, clap::Args)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub kind: Kind,
    #[arg(long, default_value_t = 200)]
    pub scenes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Frames per scene; the kind's default when omitted.
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct ConfigArgs {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one configuration key.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl ConfigArgs {
    pub fn load(&self) -> CliResult<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::from_toml(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
            None => TrainConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Directory holding tracks.csv and optionally gaps.csv.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint path; the loss log goes to `<out>.log.csv` and the
    /// effective configuration to `<out>.config.toml`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated horizons in seconds; the checkpoint's when omitted.
    #[arg(long, value_delimiter = ',')]
    pub horizons: Option<Vec<f64>>,
    /// Split whose test part is evaluated; the checkpoint's when omitted.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long, default_value = "model")]
    pub tag: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct ReportArgs {
    /// Sweep output directory or a results CSV.
    #[arg(long)]
    pub results: PathBuf,
    /// Output directory; the results directory when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    match cli.command {
        Command::Gen(a) => cmd_gen(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Sweep(a) => sweep::cmd_sweep(&a),
        Command::Report(a) => report::cmd_report(&a),
    }
}

pub fn cmd_gen(a: &GenArgs) -> CliResult<()> {
    let mut cfg = match a.kind {
        Kind::Urban => GenConfig::default(),
        Kind::Gap => GenConfig::gap_default(),
    };
    cfg.num_scenes = a.scenes;
    if let Some(f) = a.frames {
        cfg.frames_per_scene = f;
    }
    let set = match a.kind {
        Kind::Urban => generate_urban(&cfg, a.seed)?,
        Kind::Gap => generate_gap(&cfg, a.seed)?,
    };
    save_scene_dir(&set, &a.out)?;
    Ok(())
}

pub fn parse_split(s: &str) -> CliResult<SplitMethod> {
    SplitMethod::parse(s).ok_or_else(|| CliError::Usage(format!("unknown split `{s}`; expected random or critical")))
}

/// The split a configuration prescribes for `set`.
pub fn make_split(cfg: &TrainConfig, set: &SceneSet, method: SplitMethod) -> CliResult<DataSplit> {
    Ok(match method {
        SplitMethod::Random => split_random(set, cfg.split_fractions, cfg.seed)?,
        SplitMethod::Critical => split_critical(set, cfg.critical_test_fraction)?,
    })
}

pub fn load_data(dir: &Path, cfg: &TrainConfig) -> CliResult<SceneSet> {
    let set = load_scene_dir(dir, cfg.dt)?;
    if set.is_empty() {
        return Err(Error::validation(format!("{}: no scenes", dir.display())).into());
    }
    Ok(set)
}

pub const LOG_HEADER: [&str; 7] = ["epoch", "nll", "kl", "smooth", "l0", "total", "wall_s"];

pub fn write_log(path: &Path, history: &[EpochRecord]) -> CliResult<()> {
    let io = |e: csv::Error| Error::io(path, e.into());
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(LOG_HEADER).map_err(io)?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.nll.to_string(),
            r.kl.to_string(),
            r.smooth.to_string(),
            r.l0.to_string(),
            r.total.to_string(),
            r.wall_s.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Trains per `cfg` on `set` and writes checkpoint, log and configuration.
pub fn train_to(cfg: &TrainConfig, set: &SceneSet, out: &Path, log: &Path) -> CliResult<Checkpoint> {
    let split = make_split(cfg, set, cfg.split)?;
    let ck = train_with(cfg, set, &split, SmoothMode::Included, |r| {
        eprintln!(
            "epoch {:>4}  total {:.6}  l0 {:.6}  smooth {:.6}  {:.2}s",
            r.epoch, r.total, r.l0, r.smooth, r.wall_s
        )
    })?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    ck.save(out)?;
    write_log(log, &ck.history)?;
    Ok(ck)
}

pub fn cmd_train(a: &TrainArgs) -> CliResult<()> {
    let cfg = a.config.load()?;
    let set = load_data(&a.data, &cfg)?;
    train_to(&cfg, &set, &a.out, &sibling(&a.out, ".log.csv"))?;
    let echo = sibling(&a.out, ".config.toml");
    std::fs::write(&echo, cfg.to_toml()).map_err(|e| Error::io(&echo, e))?;
    Ok(())
}

/// Evaluates `ck` on the test part of `method`'s split of `set`.
pub fn eval_checkpoint(ck: &Checkpoint, set: &SceneSet, method: SplitMethod, tag: &str) -> CliResult<smooth_traj::metrics::MetricsTable> {
    let split = make_split(&ck.config, set, method)?;
    let model = ck.model()?;
    let f = ModelForecaster {
        model: &model,
        std: ck.standardizer,
        dt: ck.config.dt,
    };
    let ev = evaluate(&f, set, &split.test, &ck.config, &ck.standardizer, tag, method.as_str())?;
    for n in &ev.notes {
        eprintln!("note: {n}");
    }
    Ok(ev.table)
}

pub fn cmd_eval(a: &EvalArgs) -> CliResult<()> {
    let mut ck = Checkpoint::load(&a.checkpoint)?;
    if let Some(h) = &a.horizons {
        ck.config.horizons_s = h.clone();
    }
    ck.config.validate()?;
    let method = match &a.split {
        Some(s) => parse_split(s)?,
        None => ck.config.split,
    };
    let set = load_data(&a.data, &ck.config)?;
    let table = eval_checkpoint(&ck, &set, method, &a.tag)?;
    table.write_csv(&a.out)?;
    Ok(())
}
