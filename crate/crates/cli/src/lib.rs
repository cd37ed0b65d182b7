//! Command-line front end for the stochastic-acquisition experiment
//! library: config-driven experiment runs, coldness ablations, diagnostics,
//! acquisition benchmarks, and dataset generation.
//!
//! Every command reads one TOML config, applies flag/environment overrides
//! (`STOCHACQ_*`), validates before touching the filesystem, and writes its
//! outputs into a fresh `<config-hash>-<timestamp>` directory. Exit codes:
//! 0 success, 1 runtime failure, 2 configuration error.

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub mod commands;
pub mod config;
pub mod output;

pub use config::Config;

/// Command failure, split by exit code: configuration problems exit 2,
/// runtime problems exit 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError::Config(message.into())
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        CliError::Runtime(message.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

#[derive(Clone, Debug, Args)]
pub struct CommonArgs {
    /// Experiment config file (TOML).
    #[arg(long, env = "STOCHACQ_CONFIG")]
    pub config: PathBuf,

    /// Override the base seed from the config.
    #[arg(long, env = "STOCHACQ_SEED")]
    pub seed: Option<u64>,

    /// Override the output location (directory for runs, file for gen-data).
    #[arg(long, env = "STOCHACQ_OUT")]
    pub out: Option<PathBuf>,

    /// Override the number of trials.
    #[arg(long, env = "STOCHACQ_TRIALS")]
    pub trials: Option<usize>,

    /// Suppress progress logging (results still print).
    #[arg(long, env = "STOCHACQ_QUIET")]
    pub quiet: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DiagnoseKind {
    /// Spearman rank-correlation decay of scores over acquisitions.
    Rank,
    /// Frozen-score replay vs. fresh re-scoring accuracy curves.
    Frozen,
    /// Exact selection probabilities per policy and coldness.
    Scoredist,
}

#[derive(Clone, Debug, Subcommand)]
pub enum Command {
    /// Run the configured active-learning experiment.
    Run(CommonArgs),
    /// Sweep coldness values across the stochastic policies.
    AblateBeta {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated coldness values (0 allowed: uniform limit).
        #[arg(long, value_delimiter = ',', required = true)]
        betas: Vec<f64>,
    },
    /// Run one investigative diagnostic.
    Diagnose {
        #[command(flatten)]
        common: CommonArgs,
        /// Which diagnostic to run.
        #[arg(long, value_enum)]
        kind: DiagnoseKind,
    },
    /// Benchmark acquisition wall time on synthetic scores.
    Bench(CommonArgs),
    /// Generate the configured dataset as a CSV file (requires --out).
    GenData(CommonArgs),
}

#[derive(Debug, Parser)]
#[command(
    name = "stochacq",
    version,
    about = "Stochastic batch acquisition experiments for pool-based active learning"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::Run(common)
            | Command::Bench(common)
            | Command::GenData(common)
            | Command::AblateBeta { common, .. }
            | Command::Diagnose { common, .. } => common,
        }
    }
}

fn init_logging(quiet: bool) {
    let default = if quiet { "off" } else { "info" };
    let env = env_logger::Env::default().default_filter_or(default);
    let _ = env_logger::Builder::from_env(env)
        .format_timestamp(None)
        .format_target(false)
        .try_init();
}

fn dispatch(cli: &Cli) -> Result<PathBuf, CliError> {
    let common = cli.command.common();
    let config = Config::load(&common.config)?;
    match &cli.command {
        Command::GenData(_) => {
            // --out names the CSV file itself; only seed applies.
            let config = config.resolve(common.seed, None, None);
            commands::cmd_gen_data(&config, common.out.as_deref())
        }
        command => {
            let config =
                config.resolve(common.seed, common.out.clone(), common.trials);
            match command {
                Command::Run(_) => commands::cmd_run(&config),
                Command::AblateBeta { betas, .. } => commands::cmd_ablate_beta(&config, betas),
                Command::Diagnose { kind, .. } => commands::cmd_diagnose(&config, *kind),
                Command::Bench(_) => commands::cmd_bench(&config),
                Command::GenData(_) => unreachable!("handled above"),
            }
        }
    }
}

/// Runs a parsed command line to completion and maps the outcome onto the
/// exit-code contract. The produced output path is printed to stdout.
pub fn run(cli: Cli) -> ExitCode {
    init_logging(cli.command.common().quiet);
    match dispatch(&cli) {
        Ok(path) => {
            println!("{}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            match e {
                CliError::Config(_) => ExitCode::from(2),
                CliError::Runtime(_) => ExitCode::from(1),
            }
        }
    }
}
