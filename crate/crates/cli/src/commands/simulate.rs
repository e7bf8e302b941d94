use std::path::Path;

use caginalp_core::control::ControlPair;
use caginalp_core::state::{run_diagnostics, solve_state, Problem, StateTrajectory};
use caginalp_core::Metric;

use super::thresholds as th;
use crate::config::{ProblemConfig, Setup};
use crate::error::{Context, Result};
use crate::io::{persist_trajectory, Csv};
use crate::report::Summary;

pub fn simulate(cfg: &ProblemConfig, out: &Path) -> Result<Summary> {
    let setup = Setup::build(cfg)?;
    let p = &setup.problem;
    let traj = solve_state(p, &setup.control).context("forward solve")?;
    let diag = run_diagnostics(&traj, p);

    let mut t = Csv::new(&[
        "step",
        "time",
        "min_phi",
        "max_phi",
        "l2_phi",
        "v_l2",
        "v_linf",
        "newton_iters",
        "cg_iters",
        "energy_residual",
        "cumulative_balance_residual",
    ]);
    for r in &diag.rows {
        t.row(&[
            r.step.into(),
            r.time.into(),
            r.min_phi.into(),
            r.max_phi.into(),
            r.l2_phi.into(),
            r.v_l2.into(),
            r.v_linf.into(),
            r.newton_iters.into(),
            r.cg_iters.into(),
            r.energy_residual.into(),
            r.cumulative_balance_residual.into(),
        ]);
    }
    t.write(&out.join("diagnostics.csv"))?;
    persist_trajectory(&traj, &out.join("trajectory"), cfg.output.stride)?;

    let compat = p.compatibility_datum(&setup.control.v0).context("compatibility datum")?;
    let mut info = Csv::new(&["key", "value"]);
    for (k, v) in [
        ("r_star_low", diag.r_star_low),
        ("r_star_high", diag.r_star_high),
        ("separation_margin", diag.separation_margin),
        ("guard_hits", diag.guard_hits as f64),
        ("max_energy_residual", diag.max_energy_residual),
        ("balance_scale", diag.balance_scale),
        ("estimate_monitor", diag.estimate_monitor),
        ("compatibility_datum_l2", p.grid.norm(&compat, Metric::L2)),
    ] {
        info.row(&[k.into(), v.into()]);
    }
    info.write(&out.join("run_info.csv"))?;

    let mut s = Summary::default();
    s.at_most(2, "energy_residual_max / scale", diag.max_energy_residual / diag.balance_scale, th::ENERGY_BALANCE);
    if is_homogeneous(p, &setup.control) {
        let oracle = homogeneous_replay(p, &setup.control)?;
        s.at_most(3, "homogeneous_oracle_max_abs_diff", homogeneous_gap(&traj, &oracle), th::HOMOGENEOUS);
    }
    if p.potential.is_singular() {
        s.at_least(4, "separation_margin", diag.separation_margin, th::SEPARATION);
        s.at_most(4, "newton_guard_hits", diag.guard_hits as f64, 0.0);
    }
    Ok(s)
}

fn constant(f: &[f64]) -> bool {
    f.iter().all(|&x| x == f[0])
}

fn is_homogeneous(p: &Problem, c: &ControlPair) -> bool {
    constant(&p.phi0) && constant(&p.w0) && constant(&c.v0) && c.u.iter().all(|u| constant(u))
}

fn homogeneous_gap(traj: &StateTrajectory, oracle: &[[f64; 3]]) -> f64 {
    let mut worst: f64 = 0.0;
    for (n, o) in oracle.iter().enumerate() {
        for (field, &x) in [&traj.phi[n], &traj.w[n], &traj.v[n]].into_iter().zip(o) {
            worst = field.iter().fold(worst, |m, &y| m.max((y - x).abs()));
        }
    }
    worst
}

/// Scalar replay of the scheme for spatially constant data: both Laplacians
/// vanish, leaving a scalar Newton solve and an explicit update.
/// Returns `[phi, w, v]` per node.
pub fn homogeneous_replay(p: &Problem, c: &ControlPair) -> Result<Vec<[f64; 3]>> {
    let tau = p.tau();
    let tc = p.params.theta_c;
    let (pot, cp) = (&p.potential, &p.coupling);
    let (mut phi, mut w, mut v) = (p.phi0[0], p.w0[0], c.v0[0]);
    let mut out = vec![[phi, w, v]];
    for u in &c.u {
        let pi = cp.pi(phi);
        let rhs = phi / tau - 2.0 / tc * pi + v * pi / (tc * tc);
        let mut x = phi;
        for _ in 0..100 {
            let f = x / tau + pot.gamma(x).context("scalar replay")? - rhs;
            let df = 1.0 / tau + pot.gamma_prime(x).context("scalar replay")?;
            let mut dx = -f / df;
            while !pot.admits(x + dx) {
                dx *= 0.5;
            }
            x += dx;
            if dx.abs() <= 1e-16 * (1.0 + x.abs()) {
                break;
            }
        }
        let v_new = v + tau * u[0] - (cp.pi_hat(x) - cp.pi_hat(phi));
        w += tau * v_new;
        v = v_new;
        phi = x;
        out.push([phi, w, v]);
    }
    Ok(out)
}
