use std::path::Path;

use caginalp_core::state::{solve_state, strong_difference_norm};

use super::{loglog_slope, streams, thresholds as th};
use crate::config::{ProblemConfig, Setup};
use crate::error::{Context, Result};
use crate::io::Csv;
use crate::random;
use crate::report::Summary;

/// Perturbs all data `(phi0, w0, v0, u)` along one smooth random direction
/// scaled by each `delta` and fits the log-log slope of the strong
/// difference norm.
pub fn cont_dependence(cfg: &ProblemConfig, out: &Path) -> Result<Summary> {
    let setup = Setup::build(cfg)?;
    let p = &setup.problem;
    let base = solve_state(p, &setup.control).context("forward solve")?;

    let mut rng = random::generator(cfg.seed, streams::CONT_DEP);
    let g = &p.grid;
    // phi0 moves by at most delta/2 so singular potentials stay interior
    let d_phi = random::smooth_unit(g, &mut rng, 0.5);
    let d_w = random::smooth_unit(g, &mut rng, 1.0);
    let d_v = random::smooth_unit(g, &mut rng, 1.0);
    let d_u: Vec<_> = (0..p.time.nt).map(|_| random::smooth_unit(g, &mut rng, 1.0)).collect();

    let deltas = &cfg.checks.cd_deltas;
    let mut norms = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let mut q = p.clone();
        q.phi0.axpy(delta, &d_phi);
        q.w0.axpy(delta, &d_w);
        q.validate().context("perturbed initial data")?;
        let mut c = setup.control.clone();
        c.v0.axpy(delta, &d_v);
        for (u, d) in c.u.iter_mut().zip(&d_u) {
            u.axpy(delta, d);
        }
        let traj = solve_state(&q, &c).context("perturbed forward solve")?;
        norms.push(strong_difference_norm(&traj, &base));
    }
    let slope = loglog_slope(deltas, &norms);
    let mut t = Csv::new(&["delta", "difference_norm", "ratio"]);
    for (d, n) in deltas.iter().zip(&norms) {
        t.row(&[(*d).into(), (*n).into(), (n / d).into()]);
    }
    t.write(&out.join("cont_dependence.csv"))?;
    let mut info = Csv::new(&["key", "value"]);
    info.row(&["slope".into(), slope.into()]);
    info.write(&out.join("cont_dependence_fit.csv"))?;

    let mut s = Summary::default();
    s.at_most(11, "abs(slope - 1)", (slope - 1.0).abs(), th::CD_SLOPE_BAND);
    Ok(s)
}
