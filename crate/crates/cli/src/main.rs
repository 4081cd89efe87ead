use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use surfns_cli::commands::{execute, exit_code, Command, Options};

#[derive(Parser)]
#[command(name = "surfns", version, about = "Galerkin vorticity runs and a priori diagnostics on the torus and sphere")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Build the spectrum and triad tables, report sizes.
    Spectrum(Args),
    /// Integrate the Galerkin system and write monitors.
    Run(Args),
    /// Trapping envelope margins and viscous-domination reports.
    Trap(Args),
    /// Multilinear eigenfunction estimate experiments.
    Estimates(Args),
    /// Sample a snapshot on a grid.
    Export(Args),
}

#[derive(clap::Args)]
struct Args {
    /// Configuration file (or a previous manifest.txt).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "surfns-out")]
    out: PathBuf,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Triad cache directory (default: $SURFNS_CACHE_DIR, then <out>/cache).
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Suppress progress output.
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, a) = match cli.command {
        Sub::Spectrum(a) => (Command::Spectrum, a),
        Sub::Run(a) => (Command::Run, a),
        Sub::Trap(a) => (Command::Trap, a),
        Sub::Estimates(a) => (Command::Estimates, a),
        Sub::Export(a) => (Command::Export, a),
    };
    let opts = Options {
        config: a.config,
        out: a.out,
        seed: a.seed,
        cache: a.cache,
        quiet: a.quiet,
    };
    match execute(cmd, &opts) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("surfns: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
