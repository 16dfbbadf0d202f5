//! `ldiff`: runs the experiments of `langevin-core` and writes tidy CSV/JSON
//! plus a manifest per run. File formats are described in FORMATS.md.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;

#[derive(Parser)]
#[command(
    name = "ldiff",
    version,
    about = "Unified Langevin view of diffusion models: experiments and checks"
)]
struct Cli {
    /// Worker threads for chain-parallel loops (0 = one per core). Outputs do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

/// Options shared by every command that writes an output directory.
#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// TOML run configuration; omitted keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory [default: $LDIFF_OUTPUT_ROOT/<command>, or ldiff-out/<command>].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replace the files of a previous run in the output directory.
    #[arg(long)]
    pub overwrite: bool,
    /// Also write plot.gp, a gnuplot script for the main CSV.
    #[arg(long)]
    pub emit_gnuplot: bool,
    /// Overrides `seed` from the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a state/level point or a model prediction to another parameterization or kind.
    Convert(commands::convert::ConvertArgs),
    /// Forward noising: Euler–Maruyama or closed-form samples against the exact marginals.
    SampleForward {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        chains: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Reverse generation with the analytic or a trained field.
    SampleReverse(commands::reverse::ReverseArgs),
    /// Langevin or forward/reverse split dynamics at a fixed level, with moment traces.
    Langevin {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        chains: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Train a score/noise/velocity MLP by denoising score matching.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// 1-D Fokker–Planck evolution of two densities and their KL trace.
    FpSolve {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run the invariant suites and print a pass/fail table.
    Verify(commands::verify::VerifyArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot set up {} threads: {e}", cli.threads)))?;
    }
    match cli.command {
        Command::Convert(a) => commands::convert::run(&a),
        Command::SampleForward { run, chains, steps } => commands::forward::run(&run, chains, steps),
        Command::SampleReverse(a) => commands::reverse::run(&a),
        Command::Langevin { run, chains, steps } => commands::langevin::run(&run, chains, steps),
        Command::Train { run, steps } => commands::train::run(&run, steps),
        Command::FpSolve { run } => commands::fp::run(&run),
        Command::Verify(a) => commands::verify::run(&a),
    }
}

fn main() -> ExitCode {
    output::mark_start();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ldiff: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
