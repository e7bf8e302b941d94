//! Subcommands. Each builds its problem from the configuration, writes its
//! CSV reports into the output directory and returns the criterion rows.

mod cont_dependence;
mod convergence;
mod grad_check;
mod optimize;
mod simulate;

use std::path::Path;

use caginalp_core::state::{StateTrajectory, Problem};
use caginalp_core::Metric;

use crate::config::ProblemConfig;
use crate::error::Result;
use crate::report::Summary;

pub use adjoint_test::adjoint_test;
pub use cont_dependence::cont_dependence;
pub use convergence::{convergence, laplacian_study};
pub use grad_check::grad_check;
pub use optimize::optimize;
pub use simulate::{homogeneous_replay, simulate};

/// Acceptance thresholds. Not configurable on purpose.
pub mod thresholds {
    pub const LAPLACIAN_ORDER: f64 = 1.9;
    pub const LAPLACIAN_MEAN: f64 = 1e-13;
    pub const ENERGY_BALANCE: f64 = 1e-10;
    pub const HOMOGENEOUS: f64 = 1e-10;
    pub const SEPARATION: f64 = 0.01;
    pub const TAYLOR_SLOPE: f64 = 1.8;
    pub const DOT_TEST: f64 = 1e-10;
    pub const FD_GRADIENT: f64 = 1e-6;
    pub const ADJOINT_GAP: f64 = 5e-2;
    pub const ADJOINT_ORDER: f64 = 0.8;
    pub const STATIONARITY: f64 = 1e-6;
    pub const MAX_ITERATIONS: f64 = 200.0;
    pub const PROJECTION_FORMULA: f64 = 1e-6;
    pub const VI_MIN: f64 = -1e-6;
    pub const RECOVERY_RATIO: f64 = 0.1;
    pub const CD_SLOPE_BAND: f64 = 0.1;
}

/// Stream ids of the seeded generators, one per study.
pub(crate) mod streams {
    pub const TAYLOR: u64 = 1;
    pub const FD: u64 = 2;
    pub const DOT: u64 = 3;
    pub const CONT_DEP: u64 = 4;
    pub const LAPLACIAN: u64 = 5;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    GradCheck,
    AdjointTest,
    Optimize,
    Convergence,
    ContDependence,
}

impl Command {
    pub const ALL: [Command; 6] = [
        Command::Simulate,
        Command::GradCheck,
        Command::AdjointTest,
        Command::Optimize,
        Command::Convergence,
        Command::ContDependence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::GradCheck => "grad_check",
            Command::AdjointTest => "adjoint_test",
            Command::Optimize => "optimize",
            Command::Convergence => "convergence",
            Command::ContDependence => "cont_dependence",
        }
    }

    pub fn run(self, cfg: &ProblemConfig, out: &Path) -> Result<Summary> {
        match self {
            Command::Simulate => simulate(cfg, out),
            Command::GradCheck => grad_check(cfg, out),
            Command::AdjointTest => adjoint_test(cfg, out),
            Command::Optimize => optimize(cfg, out),
            Command::Convergence => convergence(cfg, out),
            Command::ContDependence => cont_dependence(cfg, out),
        }
    }
}

/// `max_n (|dphi_n| + |dw_n| + |dv_n|)` in L2, i.e. the L-infinity-in-time
/// distance of two trajectories (or of `a - b - eps * lin`).
pub(crate) fn sup_l2_distance(
    p: &Problem,
    a: &StateTrajectory,
    b: Option<&StateTrajectory>,
    lin: Option<(&caginalp_core::sensitivity::LinearizedPair, f64)>,
) -> f64 {
    let g = &p.grid;
    let mut worst: f64 = 0.0;
    for n in 0..a.nodes() {
        let mut parts = [a.phi[n].clone(), a.w[n].clone(), a.v[n].clone()];
        if let Some(b) = b {
            parts[0].axpy(-1.0, &b.phi[n]);
            parts[1].axpy(-1.0, &b.w[n]);
            parts[2].axpy(-1.0, &b.v[n]);
        }
        if let Some((lin, eps)) = lin {
            parts[0].axpy(-eps, &lin.xi[n]);
            parts[1].axpy(-eps, &lin.eta[n]);
            parts[2].axpy(-eps, &lin.eta_t[n]);
        }
        worst = worst.max(parts.iter().map(|f| g.norm(f, Metric::L2)).sum());
    }
    worst
}

/// Observed orders `log(e_i / e_{i+1}) / log(r_i)` between successive levels.
pub(crate) fn orders(errors: &[f64], ratios: &[f64]) -> Vec<f64> {
    errors.windows(2).zip(ratios).map(|(w, r)| (w[0] / w[1]).ln() / r.ln()).collect()
}

/// Least-squares slope of `ln y` against `ln x`.
pub(crate) fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
