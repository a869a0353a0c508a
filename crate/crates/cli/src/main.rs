use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ranknoise_cli::{execute, Experiment, Options};

/// Rank-based particles with common noise and their limit.
#[derive(Parser)]
#[command(name = "ranknoise", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the deterministic porous medium equation.
    SolvePme(Flags),
    /// Simulate the particle system.
    Simulate(Flags),
    /// Compute the limit by fixed-point iteration on one common path.
    FixedPoint(Flags),
    /// Compare particle systems of growing size with their limit.
    Converge(Flags),
    /// Weak residual of the limit under grid refinement.
    SpdeResidual(Flags),
}

#[derive(Args)]
struct Flags {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides RANKNOISE_OUT_DIR and the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (experiment, flags) = match cli.command {
        Command::SolvePme(f) => (Experiment::SolvePme, f),
        Command::Simulate(f) => (Experiment::Simulate, f),
        Command::FixedPoint(f) => (Experiment::FixedPoint, f),
        Command::Converge(f) => (Experiment::Converge, f),
        Command::SpdeResidual(f) => (Experiment::SpdeResidual, f),
    };
    let opts = Options {
        config: flags.config,
        out: flags.out,
        seed: flags.seed,
        workers: flags.workers,
        quiet: flags.quiet,
    };
    ExitCode::from(execute(experiment, &opts) as u8)
}
