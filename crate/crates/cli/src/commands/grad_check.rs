use std::path::Path;

use caginalp_core::control::{reduced_cost, reduced_gradient, ControlPair};
use caginalp_core::sensitivity::{tangent_solve, Perturbation};
use caginalp_core::state::solve_state;

use super::{streams, sup_l2_distance, thresholds as th};
use crate::config::{ProblemConfig, Setup};
use crate::error::{Context, Result};
use crate::io::{Cell, Csv};
use crate::random;
use crate::report::Summary;

fn moved(c: &ControlPair, pert: &Perturbation, eps: f64) -> ControlPair {
    let mut out = c.clone();
    for (u, h) in out.u.iter_mut().zip(&pert.h) {
        u.axpy(eps, h);
    }
    out.v0.axpy(eps, &pert.h0);
    out
}

/// Taylor test of the tangent map and finite-difference check of the
/// reduced gradient.
pub fn grad_check(cfg: &ProblemConfig, out: &Path) -> Result<Summary> {
    let setup = Setup::build(cfg)?;
    let p = &setup.problem;
    let control = &setup.control;
    let mut s = Summary::default();

    let base = solve_state(p, control).context("forward solve")?;
    let mut rng = random::generator(cfg.seed, streams::TAYLOR);
    let pert = random::perturbation(p, &mut rng);
    let lin = tangent_solve(&base, p, &pert).context("tangent solve")?;
    let tangent_norm = sup_l2_distance(p, &zero_like(&base), None, Some((&lin, -1.0)));
    let mut t = Csv::new(&["epsilon", "lhs", "rhs", "remainder", "slope"]);
    let mut prev: Option<(f64, f64)> = None;
    let mut min_slope = f64::INFINITY;
    for &eps in &cfg.checks.taylor_eps {
        let traj = solve_state(p, &moved(control, &pert, eps)).context("perturbed forward solve")?;
        let lhs = sup_l2_distance(p, &traj, Some(&base), None);
        let rem = sup_l2_distance(p, &traj, Some(&base), Some((&lin, eps)));
        let slope = prev.map(|(e0, r0)| (r0 / rem).ln() / (e0 / eps).ln());
        if let Some(sl) = slope {
            min_slope = min_slope.min(sl);
        }
        t.row(&[eps.into(), lhs.into(), (eps * tangent_norm).into(), rem.into(), slope.into()]);
        prev = Some((eps, rem));
    }
    t.write(&out.join("taylor.csv"))?;
    s.at_least(5, "taylor_remainder_slope_min", min_slope, th::TAYLOR_SLOPE);

    let grad = reduced_gradient(control, p, &setup.cost).context("reduced gradient")?;
    let j = |c: &ControlPair| reduced_cost(c, p, &setup.cost).map(|e| e.value).context("reduced cost");
    let mut rng = random::generator(cfg.seed, streams::FD);
    let mut t = Csv::new(&["trial", "epsilon", "lhs", "rhs", "rel_err", "selected"]);
    let mut worst: f64 = 0.0;
    let steps = &cfg.checks.fd_steps;
    for trial in 0..cfg.checks.fd_directions {
        let pert = random::perturbation(p, &mut rng);
        let d = ControlPair { u: pert.h.clone(), v0: pert.h0.clone() };
        let exact = grad.apply(&d, &p.grid, p.tau());
        let mut fd = Vec::with_capacity(3);
        for &e in steps {
            fd.push((j(&moved(control, &pert, e))? - j(&moved(control, &pert, -e))?) / (2.0 * e));
        }
        // keep the middle step unless the sweep is still converging there
        let pick = if (fd[0] - fd[1]).abs() <= (fd[1] - fd[2]).abs() { 1 } else { 2 };
        for k in 0..3 {
            let rel = (fd[k] - exact).abs() / exact.abs();
            if k == pick {
                worst = worst.max(rel);
            }
            t.row(&[trial.into(), steps[k].into(), fd[k].into(), exact.into(), rel.into(), Cell::I((k == pick) as u64)]);
        }
    }
    t.write(&out.join("fd.csv"))?;
    s.at_most(7, "fd_gradient_rel_err_max", worst, th::FD_GRADIENT);
    Ok(s)
}

fn zero_like(t: &caginalp_core::state::StateTrajectory) -> caginalp_core::state::StateTrajectory {
    let mut z = t.clone();
    for f in z.phi.iter_mut().chain(z.w.iter_mut()).chain(z.v.iter_mut()) {
        f.scale(0.0);
    }
    z
}
