//! `impact`: batch front end for the toy model, the synthetic market and the
//! impact estimation pipeline.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 estimation or
//! numerical failure.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{DeltaPolicy, IxMode, LagAxis};

#[derive(Parser, Debug)]
#[command(name = "impact", version, about = "Impact-kernel simulation and estimation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (default `out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Largest lag in days (toy default 100, estimation default 10).
    #[arg(long, global = true)]
    pub max_lag: Option<usize>,
    /// Overwrite outputs written under a different configuration.
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Toy model: analytic and Monte Carlo raw impact.
    Toy,
    /// Generate a synthetic meta-order dataset.
    Simulate,
    /// Run the estimation pipeline on a dataset and write figure tables.
    Estimate(EstimateArgs),
    /// Fit a power-law decay to one column of a kernel table.
    FitPowerlaw(PowerLawArgs),
    /// Merge blocks of k consecutive days of a dataset.
    Regroup(RegroupArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct EstimateArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// `fit` (square-root law on the data) or a fixed exponent.
    #[arg(long)]
    pub delta: Option<DeltaPolicy>,
    /// Leave the predictor out of the main deconvolution.
    #[arg(long)]
    pub no_predictor: bool,
    /// Also estimate the kernel on k-day blocks.
    #[arg(long)]
    pub regroup: Option<usize>,
    #[arg(long, value_enum)]
    pub ix_mode: Option<IxMode>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct PowerLawArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Value column (default: the second column).
    #[arg(long)]
    pub column: Option<String>,
    #[arg(long)]
    pub lag_min: Option<usize>,
    #[arg(long, value_enum)]
    pub axis: Option<LagAxis>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct RegroupArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Days per block.
    #[arg(long)]
    pub regroup: Option<usize>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<impact_core::Error>() {
            return if e.is_validation() { 1 } else { 2 };
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let common = cli.common;
    let result = match cli.command {
        Command::Toy => commands::run_toy(&common),
        Command::Simulate => commands::run_simulate(&common),
        Command::Estimate(a) => commands::run_estimate(&common, &a),
        Command::FitPowerlaw(a) => commands::run_fit_powerlaw(&common, &a),
        Command::Regroup(a) => commands::run_regroup(&common, &a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::from(exit_code(&e))
        }
    }
}
