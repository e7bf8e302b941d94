//! Command-line runner for `caginalp-core`: JSON configuration, experiment
//! drivers, CGW1 snapshots and CSV reports.
//!
//! Every run writes `effective_config.json` (the parsed configuration with
//! defaults filled in and absolute paths), its CSV reports and a
//! `summary.csv` with one row per checked quantity into the output directory.
//!
//! The `v0` projection clamps to the box and then pulls toward the clamp of
//! zero until the V-norm ball holds. That is not the V-metric projection onto
//! the intersection, so `optimize` certifies its result through the
//! stationarity residual, the pointwise projection formula for `u` and a
//! sampled variational inequality instead of through the projection.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod random;
pub mod report;

use std::fs;
use std::path::{Path, PathBuf};

pub use commands::Command;
pub use config::{parse_config, ProblemConfig, Setup};
pub use error::{CliError, Result};
pub use report::Summary;

#[derive(Debug, Clone)]
pub struct RunArgs {
    pub command: Command,
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub out_dir: PathBuf,
    pub summary: Summary,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.summary.passed() {
            error::EXIT_PASS
        } else {
            error::EXIT_CRITERION
        }
    }
}

/// Parses the configuration, applies the command-line overrides, echoes the
/// effective configuration and runs one subcommand.
pub fn run(args: &RunArgs) -> Result<Outcome> {
    let mut cfg = parse_config(&args.config)?;
    if let Some(out) = &args.out {
        cfg.output.dir = config::normalize(&std::path::absolute(out).map_err(|e| CliError::io(out, e))?);
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    run_config(args.command, &cfg)
}

pub fn run_config(command: Command, cfg: &ProblemConfig) -> Result<Outcome> {
    let out = cfg.output.dir.clone();
    fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    config::echo_config(cfg, &out)?;
    let summary = command.run(cfg, &out)?;
    summary.write(&out)?;
    Ok(Outcome { out_dir: out, summary })
}

/// Reads back an effective configuration written by a previous run.
pub fn read_echo(dir: &Path) -> Result<ProblemConfig> {
    parse_config(&dir.join("effective_config.json"))
}
