//! `brpolab`: experiment runner for the preference-RL laboratory.
//!
//! One subcommand per experiment artifact: training curves (`train`),
//! final-window summary tables (`report`), voting-accuracy curves
//! (`vote-curve`), the position-bias variance experiment
//! (`bias-experiment`), the preference-data pipeline (`datapipe`), and
//! policy evaluation (`eval`). Every subcommand is deterministic given
//! `--seed` and emits machine-readable CSV into `--out`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 batch starvation,
//! 4 numeric failure.

mod commands;
mod recipes;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use brpolab_core::config::ConfigError;
use brpolab_core::trainer::TrainError;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_STARVATION: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "brpolab", version, about = "Preference-RL laboratory experiment runner")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
struct GlobalArgs {
    /// Experiment config file (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed, overriding the config's.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Config override `key=value` (repeatable). Dotted keys; a bare leaf
    /// name works when unique, e.g. `--override max_iterations=0`.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a training experiment (or a named multi-arm recipe).
    Train(commands::train::TrainArgs),
    /// Summarize metrics files into final-window means (text + CSV).
    Report(commands::report::ReportArgs),
    /// Majority-voting accuracy versus number of votes.
    VoteCurve(commands::vote_curve::VoteCurveArgs),
    /// Position-bias variance comparison with and without the advantage weighting.
    BiasExperiment(commands::bias::BiasArgs),
    /// Preference-data pipeline: threshold filter, swap-consistency filter,
    /// and the GenRM dynamic-sampling pass.
    Datapipe(commands::datapipe::DatapipeArgs),
    /// Evaluate a policy checkpoint on the task suite.
    Eval(commands::eval::EvalArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(args) => commands::train::run(&cli.global, args),
        Command::Report(args) => commands::report::run(&cli.global, args),
        Command::VoteCurve(args) => commands::vote_curve::run(&cli.global, args),
        Command::BiasExperiment(args) => commands::bias::run(&cli.global, args),
        Command::Datapipe(args) => commands::datapipe::run(&cli.global, args),
        Command::Eval(args) => commands::eval::run(&cli.global, args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}

/// Map error chains onto the documented exit codes.
fn classify(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(train) = cause.downcast_ref::<TrainError>() {
            return match train {
                TrainError::BatchStarvation { .. } => EXIT_STARVATION,
                TrainError::Numeric { .. } => EXIT_NUMERIC,
                TrainError::Config(_) => EXIT_CONFIG,
                _ => 1,
            };
        }
        if cause.downcast_ref::<ConfigError>().is_some() {
            return EXIT_CONFIG;
        }
    }
    1
}

impl GlobalArgs {
    /// Load the config, then apply `--seed` and `--override`s.
    fn load_config(&self) -> anyhow::Result<brpolab_core::ExperimentConfig> {
        let mut base = match &self.config {
            Some(path) => brpolab_core::ExperimentConfig::from_file(path)?,
            None => brpolab_core::ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            base.seed = seed;
        }
        let cfg = base.with_overrides(&self.overrides)?;
        Ok(cfg)
    }

    fn ensure_out(&self) -> anyhow::Result<&PathBuf> {
        std::fs::create_dir_all(&self.out)?;
        Ok(&self.out)
    }
}
