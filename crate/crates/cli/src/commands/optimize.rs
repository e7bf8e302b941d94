use std::path::Path;

use caginalp_core::control;

use super::thresholds as th;
use crate::config::{ProblemConfig, Setup, TargetsConfig};
use crate::error::{Context, Result};
use crate::io::{node_file, write_cgw, Csv};
use crate::report::Summary;

/// Projected gradient run from the configured control. The final control is
/// written to `control/u/node_<n>.cgw` (nodes `1..=nt`) and `control/v0.cgw`,
/// a layout accepted back as a `{"snapshots": ...}` source.
pub fn optimize(cfg: &ProblemConfig, out: &Path) -> Result<Summary> {
    let setup = Setup::build(cfg)?;
    let p = &setup.problem;
    let opts = cfg.optimize_options();
    let report = control::optimize(p, &setup.cost, &setup.set, &setup.control, &opts).context("optimize")?;

    let mut t = Csv::new(&[
        "iter",
        "J",
        "stationarity",
        "step",
        "armijo_backtracks",
        "vi_min",
        "projection_formula_residual",
    ]);
    for r in &report.history {
        t.row(&[
            r.iter.into(),
            r.j.into(),
            r.stationarity.into(),
            r.step.into(),
            r.armijo_backtracks.into(),
            r.vi_min.into(),
            r.cor_residual.into(),
        ]);
    }
    t.write(&out.join("history.csv"))?;
    let dir = out.join("control");
    for (n, u) in report.control.u.iter().enumerate() {
        write_cgw(&node_file(&dir.join("u"), "node", n + 1), &p.grid, u)?;
    }
    write_cgw(&dir.join("v0.cgw"), &p.grid, &report.control.v0)?;

    let mut s = Summary::default();
    let hist = &report.history;
    if cfg.checks.certificates {
        let c = report.certificates;
        let scale = 1f64.max(report.control.norm(&p.grid, p.tau()));
        s.at_most(9, "stationarity_residual", c.stationarity, th::STATIONARITY);
        s.at_most(9, "iterations", (hist.len() - 1) as f64, th::MAX_ITERATIONS);
        s.at_most(9, "projection_formula_residual / scale", c.cor_residual.unwrap_or(f64::NAN) / scale, th::PROJECTION_FORMULA);
        s.at_least(9, "vi_min / scale", c.vi_min / scale, th::VI_MIN);
    }
    if matches!(cfg.cost.targets, TargetsConfig::FromControl { .. }) {
        let j0 = hist[0].j;
        s.at_most(10, "J_final / J_init", report.value / j0, th::RECOVERY_RATIO);
        let rise = hist.windows(2).map(|w| w[1].j - w[0].j).fold(0.0, f64::max);
        s.at_most(10, "max_J_increase", rise, 0.0);
    }
    Ok(s)
}
