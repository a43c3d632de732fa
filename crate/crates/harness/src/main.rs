use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mmpos_harness::experiments::{self, ModelKind, Run};
use mmpos_harness::{ExperimentConfig, HarnessError};

/// mmWave positioning experiments: bounds, model-based benchmark and
/// learned end-to-end systems.
#[derive(Debug, Parser)]
#[command(name = "mmpos", version)]
struct Cli {
    /// TOML configuration file; built-in defaults when absent.
    #[arg(long, global = true, env = "MMPOS_CONFIG")]
    config: Option<PathBuf>,
    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true, env = "MMPOS_OUT")]
    out: Option<PathBuf>,
    /// RNG seed (overrides `seed`).
    #[arg(long, global = true, env = "MMPOS_SEED")]
    seed: Option<u64>,
    /// Monte-Carlo trials per point (overrides `trials`).
    #[arg(long, global = true, env = "MMPOS_TRIALS")]
    trials: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    Aod,
    Pos,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// √CRB and PEB of the benchmark precoders over the SNR grid.
    BoundsSweep,
    /// Benchmark Monte-Carlo RMSE over the SNR grid.
    BaselineSweep,
    /// Train AoD autoencoders, one per training SNR.
    TrainAod,
    /// Train positioning autoencoders, one per training SNR.
    TrainPos,
    /// Evaluate trained models (and the benchmark) at their training SNRs.
    Eval {
        #[arg(long, value_enum, default_value = "aod")]
        kind: Kind,
    },
    /// Aggregate beampattern of the precoder for the evaluation sector.
    Beampattern,
    /// Benchmark RMSE along the configured sweep axis.
    HwiSweep,
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, HarnessError> {
    let cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let run = Run::new(cfg, cli.seed, cli.trials, cli.out)?;
    match cli.command {
        Command::BoundsSweep => experiments::bounds_sweep(&run),
        Command::BaselineSweep => experiments::baseline_sweep(&run),
        Command::TrainAod => experiments::train(&run, ModelKind::Aod),
        Command::TrainPos => experiments::train(&run, ModelKind::Pos),
        Command::Eval { kind } => experiments::eval(
            &run,
            match kind {
                Kind::Aod => ModelKind::Aod,
                Kind::Pos => ModelKind::Pos,
            },
        ),
        Command::Beampattern => experiments::beampattern(&run),
        Command::HwiSweep => experiments::hwi_sweep(&run),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
