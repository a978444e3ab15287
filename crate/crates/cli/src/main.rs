//! Experiment harness for the particle-steering engine.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration error.

mod config;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug)]
pub enum AppError {
    Config(String),
    Runtime(String),
}

#[derive(Parser)]
#[command(
    name = "fkps",
    about = "Particle-steered sampling experiments over toy diffusion processes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Experiment configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's output.dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of seeds (repeats); overrides the config.
    #[arg(long)]
    seeds: Option<usize>,
    /// Worker threads; overrides the config.
    #[arg(long)]
    threads: Option<usize>,
    /// Log one line per completed run to stderr.
    #[arg(long)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the configured sampler over every seed and sweep point.
    Run(CommonArgs),
    /// Run fk, bon, svdd, and base on identical seeds and summarize the
    /// paired differences.
    Compare(CommonArgs),
    /// Write the exact tilted target for an enumerable configuration.
    Oracle(CommonArgs),
}

fn execute(command: &Command) -> Result<(), AppError> {
    let args = match command {
        Command::Run(a) | Command::Compare(a) | Command::Oracle(a) => a,
    };
    let file = config::load(&args.config)?;
    let experiment = config::resolve(&file, args.out.clone(), args.seeds, args.threads)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(experiment.threads)
        .build_global()
        .map_err(|e| AppError::Runtime(e.to_string()))?;
    match command {
        Command::Run(_) => runner::cmd_run(&experiment, args.verbose),
        Command::Compare(_) => runner::cmd_compare(&experiment, args.verbose),
        Command::Oracle(_) => runner::cmd_oracle(&experiment),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(AppError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
    }
}
