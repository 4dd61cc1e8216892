//! Command-line driver: data generation, training, evaluation, embedding export and plotting.

mod config;
mod manifest;
mod plot;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

pub use config::{default_map, Config};
pub use manifest::RunManifest;
pub use plot::{color_for, plot_embedding, read_points, render_svg, PlotPoint, PALETTE};

use crate::data::{
    generate_synthetic, import_csv, load_dataset, save_dataset, split_by_subject, CsvSchema,
    DataError, Dataset, Splits,
};
use crate::eval::{evaluate, export_embeddings, EvalError};
use crate::kv::KvError;
use crate::trainer::{load_checkpoint, save_checkpoint, train, Checkpoint, TrainData, TrainError};

pub const SEED_ENV: &str = "CONPRO_SEED";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config key `{0}` must be set for this command")]
    MissingKey(String),
    #[error("override `{0}` is not of the form key=value")]
    BadOverride(String),
    #[error("config key `{key}`: {reason}")]
    InvalidValue { key: String, reason: String },
    #[error("dimension mismatch: {what} is {expected} but the data has {found} features")]
    DimMismatch {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error(transparent)]
    Usage(#[from] clap::Error),
    #[error("plot: {0}")]
    Plot(String),
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Parser)]
#[command(name = "conpro", version, about = "Severity-aware representation learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// key=value config file
    #[arg(long)]
    config: PathBuf,
    /// Override one config key; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Primary output path; overrides the matching `*_path` key
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset (or convert `csv_path`) to `data_path`
    GenData(Common),
    /// Train on the train split and write `checkpoint_path` plus a log CSV
    Train(Common),
    /// Fit a probe and write test-split metrics to `metrics_path`
    Eval(Common),
    /// Export test-split embeddings to `embedding_path`
    Embed(Common),
    /// Render `embedding_path` as an SVG scatter at `plot_path`
    Plot(Common),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::GenData(_) => "gen-data",
            Self::Train(_) => "train",
            Self::Eval(_) => "eval",
            Self::Embed(_) => "embed",
            Self::Plot(_) => "plot",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Self::GenData(c) | Self::Train(c) | Self::Eval(c) | Self::Embed(c) | Self::Plot(c) => c,
        }
    }

    /// Config key naming this command's primary output.
    fn out_key(&self) -> &'static str {
        match self {
            Self::GenData(_) => "data_path",
            Self::Train(_) => "checkpoint_path",
            Self::Eval(_) => "metrics_path",
            Self::Embed(_) => "embedding_path",
            Self::Plot(_) => "plot_path",
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, env_seed: Option<&str>) -> Result<RunManifest, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    let command = cli.command;
    let common = command.common();
    let mut overrides = common.set.clone();
    if let Some(out) = &common.out {
        overrides.push(format!("{}={}", command.out_key(), out.display()));
    }
    let cfg = Config::load(&common.config, env_seed, &overrides)?;
    execute(command.name(), &cfg)
}

/// Runs the named subcommand against a resolved config and writes its manifest.
pub fn execute(command: &str, cfg: &Config) -> Result<RunManifest, CliError> {
    let start = Instant::now();
    let (artifacts, seed) = match command {
        "gen-data" => (gen_data(cfg)?, cfg.gen_config()?.seed),
        "train" => (train_cmd(cfg)?, cfg.seed()?),
        "eval" => (eval_cmd(cfg)?, cfg.seed()?),
        "embed" => (embed_cmd(cfg)?, cfg.seed()?),
        "plot" => (plot_cmd(cfg)?, cfg.seed()?),
        other => {
            return Err(CliError::InvalidValue {
                key: "command".into(),
                reason: format!("unknown command {other}"),
            })
        }
    };
    let manifest = RunManifest {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        wall_secs: start.elapsed().as_secs_f64(),
        artifacts,
        config: cfg.values().clone(),
    };
    manifest.write(&manifest.artifacts[0])?;
    Ok(manifest)
}

/// `dir/stem{suffix}` next to `path`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn load_splits(cfg: &Config) -> Result<(Dataset, Splits), CliError> {
    let ds = load_dataset(cfg.require_path("data_path")?)?;
    let splits = split_by_subject(&ds, &cfg.split_spec()?)?;
    Ok((ds, splits))
}

fn load_compatible(cfg: &Config, ds: &Dataset) -> Result<Checkpoint, CliError> {
    let ckpt = load_checkpoint(cfg.require_path("checkpoint_path")?)?;
    let expected = ckpt.config.model.input_dim;
    if expected != ds.dim() {
        return Err(CliError::DimMismatch {
            what: "checkpoint input_dim".into(),
            expected,
            found: ds.dim(),
        });
    }
    Ok(ckpt)
}

fn gen_data(cfg: &Config) -> Result<Vec<PathBuf>, CliError> {
    let gen = cfg.gen_config()?;
    let ds = match cfg.path("csv_path") {
        Some(csv) => import_csv(csv, &CsvSchema::standard(gen.dim, gen.max_severity))?,
        None => generate_synthetic(&gen)?,
    };
    let out = cfg.require_path("data_path")?;
    save_dataset(&ds, &out)?;
    println!("wrote {} samples ({} features) to {}", ds.len(), ds.dim(), out.display());
    Ok(vec![out])
}

fn train_cmd(cfg: &Config) -> Result<Vec<PathBuf>, CliError> {
    let (ds, splits) = load_splits(cfg)?;
    let tc = cfg.train_config(Some(ds.dim()))?;
    let data = TrainData {
        train: &splits.train,
        eval: Some(&splits.test),
    };
    let (ckpt, log) = train(&tc, data)?;
    let out = cfg.require_path("checkpoint_path")?;
    let log_path = cfg.path("train_log_path").unwrap_or_else(|| sibling(&out, "_log.csv"));
    save_checkpoint(&out, &ckpt)?;
    log.save_csv(&log_path)?;
    if let Some(last) = log.records.last() {
        println!("{} epoch {} loss {:.6}", last.phase, last.epoch, last.loss);
    }
    Ok(vec![out, log_path])
}

fn eval_cmd(cfg: &Config) -> Result<Vec<PathBuf>, CliError> {
    let (ds, splits) = load_splits(cfg)?;
    let ckpt = load_compatible(cfg, &ds)?;
    let outcome = evaluate(
        &ckpt.network,
        &splits,
        &cfg.probe_config()?,
        cfg.ordering_space()?,
    )?;
    let metrics = cfg.require_path("metrics_path")?;
    let confusion = cfg
        .path("confusion_path")
        .unwrap_or_else(|| sibling(&metrics, "_confusion.csv"));
    outcome.report.save(&metrics, &confusion)?;
    for (k, v) in outcome.report.rows() {
        println!("{k} {v}");
    }
    Ok(vec![metrics, confusion])
}

fn embed_cmd(cfg: &Config) -> Result<Vec<PathBuf>, CliError> {
    let (ds, splits) = load_splits(cfg)?;
    let ckpt = load_compatible(cfg, &ds)?;
    let out = cfg.require_path("embedding_path")?;
    let proj = export_embeddings(
        &ckpt.network,
        &splits.train,
        &splits.test,
        cfg.ordering_space()?,
        &out,
    )?;
    println!(
        "wrote {} rows to {} (explained variance {:.3}, {:.3})",
        splits.test.len(),
        out.display(),
        proj.explained[0],
        proj.explained[1]
    );
    Ok(vec![out])
}

fn plot_cmd(cfg: &Config) -> Result<Vec<PathBuf>, CliError> {
    let input = cfg.require_path("embedding_path")?;
    let out = cfg.require_path("plot_path")?;
    plot_embedding(&input, &out)?;
    println!("wrote {}", out.display());
    Ok(vec![out, input])
}
