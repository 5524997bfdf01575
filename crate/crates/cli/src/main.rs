//! `bpd`: train and evaluate Boltzmann policy distributions from the shell.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use bpd_core::experiments::Manifest;
use bpd_core::par;
use clap::{Parser, Subcommand};

use crate::commands::Outputs;
use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "bpd", version, about = "Boltzmann policy distributions on tabular MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration; missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one config field, e.g. `--set train.beta=5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Master seed (overrides `seed` in the config).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Soft value iteration: the MaxEnt (Boltzmann-rational) policy.
    Maxent,
    /// Ground-truth BPD marginals by quadrature or importance sampling.
    Oracle,
    /// Train a latent BPD model on the configured environment.
    TrainBpd,
    /// Roll out simulated gridworld humans.
    SimulateHumans,
    /// Score BPD and MaxEnt predictors on simulated humans.
    EvalPrediction,
    /// Mutual information between actions at different timesteps.
    MutualInfo,
    /// Train best-response robots against each human model.
    TrainCollab,
    /// Evaluate trained robots with simulated humans.
    EvalCollab,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Maxent => "maxent",
            Command::Oracle => "oracle",
            Command::TrainBpd => "train-bpd",
            Command::SimulateHumans => "simulate-humans",
            Command::EvalPrediction => "eval-prediction",
            Command::MutualInfo => "mutual-info",
            Command::TrainCollab => "train-collab",
            Command::EvalCollab => "eval-collab",
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides, cli.seed)?;
    cfg.validate()?;
    let threads = if cli.threads == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        cli.threads
    };
    let mut manifest = Manifest::new(cli.command.name(), serde_json::to_value(&cfg)?, cfg.seed, threads);
    let mut out = Outputs::new(&cli.out)?;
    let start = Instant::now();
    par::with_threads(threads, || match cli.command {
        Command::Maxent => commands::maxent(&cfg, &mut out),
        Command::Oracle => commands::oracle(&cfg, &mut out),
        Command::TrainBpd => commands::train(&cfg, &mut out),
        Command::SimulateHumans => commands::simulate(&cfg, &mut out),
        Command::EvalPrediction => commands::eval_prediction(&cfg, &mut out),
        Command::MutualInfo => commands::mutual_info(&cfg, &mut out),
        Command::TrainCollab => commands::train_collab(&cfg, &mut out),
        Command::EvalCollab => commands::eval_collab(&cfg, &cli.out, &mut out),
    })?;
    manifest.elapsed_secs = start.elapsed().as_secs_f64();
    manifest.outputs = out.files;
    manifest.write(&cli.out.join("manifest.json"))?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
