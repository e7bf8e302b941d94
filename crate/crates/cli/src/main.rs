use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use caginalp::{error, run, Command, RunArgs};

#[derive(Parser)]
#[command(name = "caginalp", version, about = "Phase field solver with thermal memory: simulation, sensitivities and optimal control")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct Common {
    /// JSON configuration file
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides output.dir)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed of the random studies (overrides seed)
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Forward solve, diagnostics and trajectory snapshots
    Simulate(Common),
    /// Taylor test of the tangent and finite-difference check of the gradient
    #[command(name = "grad_check", alias = "grad-check")]
    GradCheck(Common),
    /// Dot test of the discrete adjoint; writes adjoint snapshots
    #[command(name = "adjoint_test", alias = "adjoint-test")]
    AdjointTest(Common),
    /// Projected gradient optimization of the controls
    Optimize(Common),
    /// Laplacian order and continuous-vs-discrete adjoint refinement study
    Convergence(Common),
    /// Log-log slope of the solution difference under data perturbations
    #[command(name = "cont_dependence", alias = "cont-dependence")]
    ContDependence(Common),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { error::EXIT_USAGE as u8 } else { 0 });
        }
    };
    let (command, common) = match cli.command {
        Cmd::Simulate(c) => (Command::Simulate, c),
        Cmd::GradCheck(c) => (Command::GradCheck, c),
        Cmd::AdjointTest(c) => (Command::AdjointTest, c),
        Cmd::Optimize(c) => (Command::Optimize, c),
        Cmd::Convergence(c) => (Command::Convergence, c),
        Cmd::ContDependence(c) => (Command::ContDependence, c),
    };
    let args = RunArgs { command, config: common.config, out: common.out, seed: common.seed };
    match run(&args) {
        Ok(outcome) => {
            for line in outcome.summary.lines() {
                println!("{line}");
            }
            println!("{}: outputs in {}", command.name(), outcome.out_dir.display());
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("{}: {e}", command.name());
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
