//! Configuration-driven experiments over the `vbsde` solvers.

pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub use config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("cannot read config file {}: {source}", path.display())]
    ConfigRead { path: PathBuf, source: std::io::Error },

    #[error("invalid config {}: {message}", path.display())]
    ConfigParse { path: PathBuf, message: String },

    #[error("invalid config field `{field}`: {reason}")]
    ConfigField { field: String, reason: String },

    #[error("cannot write {}: {source}", path.display())]
    Output { path: PathBuf, source: std::io::Error },

    #[error("hypothesis {hypothesis} violated: {detail}")]
    Hypothesis { hypothesis: String, detail: String },

    #[error("{command} failed: {detail} (report: {})", report.display())]
    CheckFailed { command: String, detail: String, report: PathBuf },

    #[error(transparent)]
    Core(vbsde::Error),
}

impl From<vbsde::Error> for CliError {
    fn from(e: vbsde::Error) -> Self {
        match e {
            vbsde::Error::Hypothesis { hypothesis, detail } => CliError::Hypothesis { hypothesis, detail },
            other => CliError::Core(other),
        }
    }
}

impl CliError {
    /// 2 for configuration and usage problems, 1 for failed checks and numerical errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_)
            | CliError::ConfigRead { .. }
            | CliError::ConfigParse { .. }
            | CliError::ConfigField { .. }
            | CliError::Output { .. } => 2,
            CliError::Hypothesis { .. } | CliError::CheckFailed { .. } | CliError::Core(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "vbsde", version, about = "Linear BSDEs driven by Gaussian Volterra processes")]
pub struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true, env = "VBSDE_CONFIG", value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Output directory, overriding `output.dir`.
    #[arg(long, global = true, env = "VBSDE_OUT", value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Random seed, overriding `monte_carlo.seed`.
    #[arg(long, global = true, env = "VBSDE_SEED", value_name = "U64")]
    pub seed: Option<u64>,

    /// Worker thread cap.
    #[arg(long, global = true, env = "VBSDE_THREADS", value_name = "N")]
    pub threads: Option<usize>,

    /// Leave the generation timestamp out of output headers.
    #[arg(
        long,
        global = true,
        env = "VBSDE_NO_TIMESTAMP",
        value_parser = clap::builder::FalseyValueParser::new()
    )]
    pub no_timestamp: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// K and dK/dt on all pairs s < t of an interior grid.
    KernelTable,
    /// Variance, its derivative and the remaining variance on the refined grid.
    Variance,
    /// Report on hypotheses (H2)-(H5).
    CheckHyp,
    /// u and its gradient over a (t, x) grid.
    Solve,
    /// Exact Gaussian sample paths of the drivers.
    Simulate,
    /// PDE residual, expectation identity and covariance checks.
    Validate,
    /// Replication cost and hedging positions.
    Hedge,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::KernelTable => "kernel-table",
            Command::Variance => "variance",
            Command::CheckHyp => "check-hyp",
            Command::Solve => "solve",
            Command::Simulate => "simulate",
            Command::Validate => "validate",
            Command::Hedge => "hedge",
        }
    }
}

/// Loads the configuration and applies flag and environment overrides.
pub fn effective_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| {
        CliError::Usage("no configuration given; pass --config PATH or set VBSDE_CONFIG".into())
    })?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.monte_carlo.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    if cli.no_timestamp {
        cfg.output.timestamp = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs one command; the returned lines summarise the written artifacts.
pub fn execute(cli: &Cli) -> Result<Vec<String>, CliError> {
    let cfg = effective_config(cli)?;
    let threads = match cli.threads {
        Some(0) => return Err(CliError::Usage("--threads must be positive".into())),
        Some(n) => n,
        None => 0,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker threads: {e}")))?;
    pool.install(|| commands::dispatch(cli.command, &cfg))
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
        }
    };
    match execute(&cli) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
