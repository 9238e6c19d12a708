//! `oifuse`: simulate, build climatologies, fit fusion models, filter and
//! evaluate. Data goes to files (and the metrics table to stdout); logs and
//! error reports go to stderr.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] oifuse::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Config(_) => "ConfigInvalid",
            CliError::Io { .. } => "Io",
            CliError::Internal(_) => "Internal",
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_input_error() => 2,
            CliError::Config(_) => 2,
            _ => 1,
        }
    }

    /// The one-line JSON error report written to stderr.
    fn report(&self) -> serde_json::Value {
        json!({
            "error": self.kind(),
            "message": self.to_string(),
            "exit_code": self.exit_code(),
        })
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "oifuse",
    version,
    about = "Optimal-interpolation fusion of coarse and fine reflectance series"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory (also the data directory unless the config names one).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Restrict to this band; repeatable.
    #[arg(long = "band", global = true)]
    bands: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic site with known truth.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Per-pixel monthly median and spread from the fine archive.
    BuildClimatology {
        #[command(flatten)]
        common: Common,
    },
    /// Per-pixel coarse-to-fine linear regression.
    FitFusion {
        #[command(flatten)]
        common: Common,
    },
    /// Filtered, gap-filled target-year series with confidence intervals.
    Filter {
        #[command(flatten)]
        common: Common,
    },
    /// Leave-one-out cross-validation per site and band.
    Evaluate {
        #[command(flatten)]
        common: Common,
    },
}

fn resolve(common: &Common, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    if common.threads.is_some() {
        cfg.threads = common.threads;
    }
    if !common.bands.is_empty() {
        cfg.bands = common.bands.clone();
    }
    if let Some(seed) = seed {
        cfg.synthetic.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (common, seed) = match &cli.command {
        Command::Simulate { common, seed } => (common, *seed),
        Command::BuildClimatology { common }
        | Command::FitFusion { common }
        | Command::Filter { common }
        | Command::Evaluate { common } => (common, None),
    };
    let cfg = resolve(common, seed)?;
    fs_create(&cfg.out)?;

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.threads {
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Internal(format!("worker pool: {e}")))?;

    pool.install(|| match cli.command {
        Command::Simulate { .. } => commands::simulate(&cfg),
        Command::BuildClimatology { .. } => commands::build_climatology_cmd(&cfg),
        Command::FitFusion { .. } => commands::fit_fusion_cmd(&cfg),
        Command::Filter { .. } => commands::filter_cmd(&cfg),
        Command::Evaluate { .. } => commands::evaluate_cmd(&cfg),
    })
}

fn fs_create(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| {
        CliError::Config(format!(
            "output directory {} is not writable: {e}",
            dir.display()
        ))
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.report());
            ExitCode::from(e.exit_code())
        }
    }
}
