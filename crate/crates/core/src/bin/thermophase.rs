use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thermophase_core::cli::{self, Overrides};

#[derive(Parser)]
#[command(
    name = "thermophase",
    version,
    about = "Coupled heat, reaction and phase-field simulator"
)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Configuration file (`section.key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding `outputs.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for random perturbations, overriding `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate and write diagnostics, snapshots and a plot script.
    Run(Common),
    /// Report the homogeneous equilibrium and the coupling threshold.
    Equilibrium(Common),
    /// Simulate and evaluate every a-priori bound along the trajectory.
    Verify(Common),
    /// Fit energy decay rates over a range of coupling strengths.
    SweepAlpha {
        #[command(flatten)]
        common: Common,
        /// Comma-separated alphas, overriding `sweep.alphas`.
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
    },
    /// Observed spatial and temporal orders on the smooth preset.
    Convergence(Common),
}

fn main() -> ExitCode {
    let args = Args::parse();
    let ov = |c: &Common| Overrides {
        out: c.out.clone(),
        seed: c.seed,
    };
    let result = match &args.command {
        Command::Run(c) => cli::cmd_run(&c.config, &ov(c)),
        Command::Equilibrium(c) => cli::cmd_equilibrium(&c.config, &ov(c)),
        Command::Verify(c) => cli::cmd_verify(&c.config, &ov(c)),
        Command::SweepAlpha { common, alphas } => {
            cli::cmd_sweep_alpha(&common.config, &ov(common), alphas.as_deref())
        }
        Command::Convergence(c) => cli::cmd_convergence(&c.config, &ov(c)),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
