//! `usneedle` command-line harness.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use config::RunConfig;
use usneedle::losses::LossChoice;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or input; exit code 2.
    #[error("config error: {0}")]
    Config(String),
    /// Failure while running; exit code 3.
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "usneedle", version, about = "Needle tracking simulator and experiment harness")]
struct Cli {
    /// JSON run configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a sweep to a directory of PGM masks plus poses and ground truth.
    Simulate,
    /// Detect the needle in every frame of a sweep and score it.
    Detect {
        sweep_dir: PathBuf,
    },
    /// Closed-loop repositioning over the perturbation grid.
    Experiment,
    /// Train the toy segmenter.
    TrainToy {
        #[arg(long, value_enum)]
        loss: Option<LossArg>,
        /// Compare Dice and CE over `compare_seeds` seeds instead.
        #[arg(long)]
        compare: bool,
    },
    /// Loss anchors and finite-difference gradient checks.
    EvalLosses,
    /// Print the fully defaulted configuration.
    DefaultConfig,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum LossArg {
    Dice,
    Ce,
    Focal,
    Seg,
}

impl From<LossArg> for LossChoice {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Dice => LossChoice::Dice,
            LossArg::Ce => LossChoice::Ce,
            LossArg::Focal => LossChoice::Focal,
            LossArg::Seg => LossChoice::Seg,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(CliError::Config("--jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    match cli.cmd {
        Command::Simulate => commands::simulate(&cfg, &cli.out),
        Command::Detect { sweep_dir } => commands::detect(&cfg, &sweep_dir, &cli.out),
        Command::Experiment => commands::experiment(&cfg, &cli.out),
        Command::TrainToy { loss, compare } => {
            if let Some(l) = loss {
                cfg.train.loss = l.into();
            }
            if compare {
                commands::compare_losses(&cfg, &cli.out)
            } else {
                commands::train_toy(&cfg, &cli.out)
            }
        }
        Command::EvalLosses => commands::eval_losses(&cfg, &cli.out),
        Command::DefaultConfig => {
            println!("{}", serde_json::to_string_pretty(&RunConfig::default())?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("usneedle: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
