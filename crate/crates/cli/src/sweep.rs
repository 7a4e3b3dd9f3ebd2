use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use smooth_traj::metrics::MetricsTable;
use smooth_traj::scenes::{SplitMethod, GAPS_FILE, TRACKS_FILE};
use smooth_traj::training::{Checkpoint, TrainConfig};
use smooth_traj::Error;

use crate::{eval_checkpoint, load_data, parse_split, train_to, CliError, CliResult, ConfigArgs};

pub const DEFAULT_BETAS: [f64; 6] = [0.0, 0.01, 0.1, 0.5, 1.0, 10.0];

pub const CONFIG_FILE: &str = "config.toml";
pub const HASH_FILE: &str = "config.sha256";
pub const CHECKPOINT_FILE: &str = "checkpoint.toml";
pub const LOG_FILE: &str = "train_log.csv";
pub const RESULTS_FILE: &str = "results.csv";

#[derive(Debug, clap::Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_BETAS)]
    pub betas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = ["random".to_string(), "critical".to_string()])]
    pub splits: Vec<String>,
    /// Observed input lengths `n_I`.
    #[arg(long = "observed", value_delimiter = ',', default_values_t = [2usize, 10])]
    pub observed: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [0u64])]
    pub seeds: Vec<u64>,
}

/// One point of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub beta: f64,
    pub split: SplitMethod,
    pub observed: usize,
    pub seed: u64,
}

impl Cell {
    pub fn dir_name(&self) -> String {
        format!("beta{}_{}_nI{}_seed{}", self.beta, self.split, self.observed, self.seed)
    }

    pub fn tag(&self) -> String {
        format!("nI{}", self.observed)
    }

    pub fn config(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            beta: self.beta,
            split: self.split,
            observed_steps: self.observed,
            seed: self.seed,
            ..base.clone()
        }
    }
}

pub fn grid(betas: &[f64], splits: &[SplitMethod], observed: &[usize], seeds: &[u64]) -> Vec<Cell> {
    let mut cells = Vec::new();
    for &split in splits {
        for &n in observed {
            for &seed in seeds {
                for &beta in betas {
                    cells.push(Cell { beta, split, observed: n, seed });
                }
            }
        }
    }
    cells
}

/// Digest of the effective configuration and the raw data files.
pub fn config_hash(cfg: &TrainConfig, data_dir: &Path) -> CliResult<String> {
    let mut h = Sha256::new();
    h.update(cfg.to_toml().as_bytes());
    for name in [TRACKS_FILE, GAPS_FILE] {
        let p = data_dir.join(name);
        h.update(name.as_bytes());
        match std::fs::read(&p) {
            Ok(bytes) => {
                h.update((bytes.len() as u64).to_le_bytes());
                h.update(&bytes);
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => h.update(b"absent"),
            Err(e) => return Err(Error::io(&p, e).into()),
        }
    }
    Ok(hex::encode(h.finalize()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellStatus {
    Trained,
    Skipped,
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

/// Trains and evaluates one cell in `dir` unless its results already exist
/// under the same hash.
pub fn run_cell(cell: &Cell, base: &TrainConfig, data_dir: &Path, set: &smooth_traj::scenes::SceneSet, dir: &Path) -> CliResult<(CellStatus, MetricsTable)> {
    let cfg = cell.config(base);
    cfg.validate()?;
    let hash = config_hash(&cfg, data_dir)?;
    let hash_path = dir.join(HASH_FILE);
    let results = dir.join(RESULTS_FILE);
    if dir.exists() {
        match std::fs::read_to_string(&hash_path) {
            Ok(prev) if prev.trim() == hash => {
                if results.exists() {
                    return Ok((CellStatus::Skipped, MetricsTable::read_csv(&results)?));
                }
            }
            Ok(prev) => {
                return Err(Error::config(
                    "sweep",
                    format!(
                        "{} holds results for configuration hash {} but this run has {hash}; \
                         remove the directory or choose another --out",
                        dir.display(),
                        prev.trim()
                    ),
                )
                .into())
            }
            Err(_) if dir.read_dir().map_err(|e| Error::io(dir, e))?.next().is_some() => {
                return Err(Error::config(
                    "sweep",
                    format!("{} is not empty and has no {HASH_FILE}; refusing to overwrite it", dir.display()),
                )
                .into())
            }
            Err(_) => {}
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&hash_path, &format!("{hash}\n"))?;
    write(&dir.join(CONFIG_FILE), &cfg.to_toml())?;
    let ck: Checkpoint = train_to(&cfg, set, &dir.join(CHECKPOINT_FILE), &dir.join(LOG_FILE))?;
    let table = eval_checkpoint(&ck, set, cell.split, &cell.tag())?;
    table.write_csv(&results)?;
    Ok((CellStatus::Trained, table))
}

pub fn cmd_sweep(a: &SweepArgs) -> CliResult<()> {
    if a.betas.is_empty() || a.splits.is_empty() || a.observed.is_empty() || a.seeds.is_empty() {
        return Err(CliError::Usage("sweep needs at least one beta, split, observed length and seed".into()));
    }
    let base = a.config.load()?;
    let splits = a.splits.iter().map(|s| parse_split(s)).collect::<CliResult<Vec<_>>>()?;
    let set = load_data(&a.data, &base)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write(&a.out.join(CONFIG_FILE), &base.to_toml())?;
    let mut merged = MetricsTable::new();
    for cell in grid(&a.betas, &splits, &a.observed, &a.seeds) {
        let dir = a.out.join(cell.dir_name());
        let (status, table) = run_cell(&cell, &base, &a.data, &set, &dir)?;
        eprintln!("{}: {}", cell.dir_name(), if status == CellStatus::Skipped { "skipped" } else { "done" });
        merged.extend(table)?;
    }
    merged.write_csv(&a.out.join(RESULTS_FILE))?;
    Ok(())
}
