//! `fta-sim`: runs federated backdoor experiments from TOML configs.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "fta-sim", version, about = "Federated-learning backdoor simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides `fl.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
    /// Record per-round wall time in rounds.csv (makes the file
    /// non-reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment and write rounds.csv, checkpoints and feature tables.
    Run(RunArgs),
    /// Run one experiment per value of a single config key.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Dotted config key, e.g. `attack.trigger_size`.
        #[arg(long)]
        key: String,
        /// Comma-separated values, e.g. `0.5,1,2`.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Run the built-in oracle and invariant checks.
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Re-evaluate a saved global model (and generator) on the test set.
    Replay {
        #[arg(long)]
        config: PathBuf,
        /// Global model checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Generator checkpoint, required for flexible-trigger configs.
        #[arg(long)]
        generator: Option<PathBuf>,
        /// Where to write metrics and feature tables.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => commands::run(&a.config, &a.out, a.seed, a.force, a.timing),
        Command::Sweep { run: a, key, values } => commands::sweep(&a.config, &a.out, a.seed, a.force, a.timing, &key, &values),
        Command::Check { seed } => commands::check(seed),
        Command::Replay { config, checkpoint, generator, out, force } => {
            commands::replay(&config, &checkpoint, generator.as_deref(), out.as_deref(), force)
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
