use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use scaffold_sim::harness::{self, parse_config, print_config, Task, DEFAULTS_HELP};
use scaffold_sim::Error;

#[derive(Parser)]
#[command(version, about = "Scaffold / FedAvg federated simulation harness", after_help = DEFAULTS_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config file.
    #[arg(long)]
    config: PathBuf,
    /// Output path; defaults to the config's output_path, then stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Replaces the config's seed list with this single seed.
    #[arg(long)]
    seed_override: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// MSE curves of Scaffold and FedAvg per client count and seed.
    Figure1(Common),
    /// Stationary trace of the parameter covariance across client counts.
    Speedup(Common),
    /// Mean squared Λ-distance of synchronously coupled chains.
    Coupling(Common),
    /// Stationary moments with their first-order predictions.
    Stationary(Common),
    /// First-order predictions only.
    Predict(Common),
    /// Step size, local steps and round counts for a target accuracy.
    Complexity(Common),
    /// Prints the fully resolved config.
    PrintConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

fn execute(cli: Cli) -> Result<(), Error> {
    let (task, common) = match cli.command {
        Command::PrintConfig { config } => {
            print!("{}", print_config(&parse_config(&config)?));
            return Ok(());
        }
        Command::Figure1(c) => (Task::Figure1, c),
        Command::Speedup(c) => (Task::Speedup, c),
        Command::Coupling(c) => (Task::Coupling, c),
        Command::Stationary(c) => (Task::Stationary, c),
        Command::Predict(c) => (Task::Predict, c),
        Command::Complexity(c) => (Task::Complexity, c),
    };
    let mut cfg = parse_config(&common.config)?;
    cfg.task = task;
    if let Some(seed) = common.seed_override {
        cfg.run.seeds = vec![seed];
    }
    let output = harness::run_task(&cfg, common.threads)?;
    match common.out.or(cfg.output_path) {
        Some(path) => std::fs::write(path, output)?,
        None => print!("{output}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.class());
            ExitCode::FAILURE
        }
    }
}
