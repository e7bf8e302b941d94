use std::f64::consts::PI;
use std::path::Path;

use caginalp_core::control::{assemble_gradient, GradientPair};
use caginalp_core::sensitivity::{adjoint_solve_continuous, adjoint_solve_discrete, GradientSeeds};
use caginalp_core::state::{solve_state, Problem, StateTrajectory};
use caginalp_core::{Field, GridSpec, Metric};

use super::{orders, streams, thresholds as th};
use crate::config::{ProblemConfig, Setup};
use crate::error::{CliError, Context, Result};
use crate::io::Csv;
use crate::random;
use crate::report::Summary;

/// `|g_a - g_b| / |g_a|` in the product norm of the controls; zero if both vanish.
pub(crate) fn relative_gap(p: &Problem, a: &GradientPair, b: &GradientPair) -> f64 {
    let diff = GradientPair {
        g_u: a.g_u.iter().zip(&b.g_u).map(|(x, y)| x.sub(y)).collect(),
        g_v: a.g_v.sub(&b.g_v),
    };
    let d = diff.norm(&p.grid, p.tau());
    if d == 0.0 {
        0.0
    } else {
        d / a.norm(&p.grid, p.tau())
    }
}

/// Laplacian of `cos(pi x) cos(pi y)` on the unit square against the exact
/// `-2 pi^2 cos cos`, and the zero mean of the discrete Laplacian on random
/// fields. Returns `(n, L2 error)` per level and the worst mean ratio.
pub fn laplacian_study(levels: &[usize], seed: u64) -> (Vec<(usize, f64)>, f64) {
    let mut rng = random::generator(seed, streams::LAPLACIAN);
    let mut errors = Vec::new();
    let mut worst_mean: f64 = 0.0;
    for &n in levels {
        let g = GridSpec::new(1.0, 1.0, n, n).expect("level grid");
        let f = g.sample(|x, y| (PI * x).cos() * (PI * y).cos());
        let e = g.laplacian(&f).zip_map(&f, |l, fi| l + 2.0 * PI * PI * fi);
        errors.push((n, g.norm(&e, Metric::L2)));
        for _ in 0..10 {
            let r = random::rough_field(&g, &mut rng, 1.0);
            let mean = g.integral(&g.laplacian(&r));
            worst_mean = worst_mean.max(mean.abs() / g.norm(&r, Metric::L2));
        }
    }
    (errors, worst_mean)
}

fn gradient_gap(cfg: &ProblemConfig) -> Result<f64> {
    let setup = Setup::build(cfg)?;
    let p = &setup.problem;
    let cost = &setup.cost;
    let base = solve_state(p, &setup.control).context("forward solve")?;
    let tol = p.opts.cg_tol;
    let (seeds, _) = adjoint_solve_discrete(&base, p, cost).context("discrete adjoint")?;
    let discrete = assemble_gradient(&seeds, &setup.control, cost, &p.grid, tol).context("gradient")?;
    let pair =
        adjoint_solve_continuous(&base, p, cost, cfg.checks.memory_sign.into()).context("continuous adjoint")?;
    let cont_seeds = GradientSeeds { u: pair.q[1..].to_vec(), v0: pair.q[0].clone() };
    let continuous = assemble_gradient(&cont_seeds, &setup.control, cost, &p.grid, tol).context("gradient")?;
    Ok(relative_gap(p, &discrete, &continuous))
}

/// Levels `(n/4, nt/4)`, `(n/2, nt/2)`, `(n, nt)` of the configured problem.
fn levels(cfg: &ProblemConfig) -> Result<Vec<ProblemConfig>> {
    let (n, nt) = (cfg.grid.nx, cfg.time.nt);
    if n % 4 != 0 || nt % 4 != 0 || n / 4 < 3 {
        return Err(CliError::Validation(format!(
            "convergence: nx = {n} and nt = {nt} must be multiples of 4 with nx >= 12"
        )));
    }
    Ok([4, 2, 1].iter().map(|&d| cfg.at_resolution(n / d, nt / d)).collect())
}

pub fn convergence(cfg: &ProblemConfig, out: &Path) -> Result<Summary> {
    if !cfg.is_analytic() {
        return Err(CliError::Validation(
            "convergence: all fields must be analytic to rebuild the problem on other grids".into(),
        ));
    }
    let mut s = Summary::default();

    let lv = &cfg.checks.laplacian_levels;
    let (errors, worst_mean) = laplacian_study(lv, cfg.seed);
    let ratios: Vec<f64> = lv.windows(2).map(|w| w[1] as f64 / w[0] as f64).collect();
    let errs: Vec<f64> = errors.iter().map(|e| e.1).collect();
    let ord = orders(&errs, &ratios);
    let mut t = Csv::new(&["n", "error", "order"]);
    for (k, (n, e)) in errors.iter().enumerate() {
        t.row(&[(*n).into(), (*e).into(), (k.checked_sub(1).map(|i| ord[i])).into()]);
    }
    t.write(&out.join("laplacian.csv"))?;
    s.at_least(1, "laplacian_order_min", ord.iter().copied().fold(f64::INFINITY, f64::min), th::LAPLACIAN_ORDER);
    s.at_most(1, "laplacian_mean / |f|", worst_mean, th::LAPLACIAN_MEAN);

    let configs = levels(cfg)?;
    let mut gaps = Vec::new();
    for c in &configs {
        gaps.push(gradient_gap(c)?);
    }
    let ord = orders(&gaps, &[2.0, 2.0]);
    let mut t = Csv::new(&["n", "nt", "tau", "gap", "order"]);
    for (k, (c, g)) in configs.iter().zip(&gaps).enumerate() {
        let tau = c.time.t_final / c.time.nt as f64;
        t.row(&[c.grid.nx.into(), c.time.nt.into(), tau.into(), (*g).into(), (k.checked_sub(1).map(|i| ord[i])).into()]);
    }
    t.write(&out.join("adjoint_convergence.csv"))?;
    s.at_most(8, "adjoint_gradient_gap_finest", gaps[2], th::ADJOINT_GAP);
    s.at_least(8, "adjoint_gap_order_min", ord[0].min(ord[1]), th::ADJOINT_ORDER);

    if let Some(sc) = cfg.checks.self_convergence {
        state_self_convergence(&configs, sc.reference_n, sc.time_refinement, out)?;
    }
    Ok(s)
}

/// Mean of the fine cells covering each coarse cell.
fn restrict(fine: &GridSpec, f: &[f64], coarse: &GridSpec) -> Field {
    let r = fine.nx / coarse.nx;
    let mut out = coarse.zeros();
    for j in 0..fine.ny {
        for i in 0..fine.nx {
            out[coarse.index(i / r, j / r)] += f[fine.index(i, j)];
        }
    }
    out.scale(1.0 / (r * r) as f64);
    out
}

/// `max_n |a_n - R b_{n k}|` in L2 for `phi` and `v`, with `R` the cell
/// average restriction and `k` the time refinement between the grids.
fn sup_error(coarse: &StateTrajectory, fine: &StateTrajectory, k: usize) -> (f64, f64) {
    let (gc, gf) = (&coarse.grid, &fine.grid);
    let mut e = (0.0f64, 0.0f64);
    for n in 0..coarse.nodes() {
        let dp = coarse.phi[n].sub(&restrict(gf, &fine.phi[n * k], gc));
        let dv = coarse.v[n].sub(&restrict(gf, &fine.v[n * k], gc));
        e.0 = e.0.max(gc.norm(&dp, Metric::L2));
        e.1 = e.1.max(gc.norm(&dv, Metric::L2));
    }
    e
}

/// Spatial rows refine `n` on the reference time grid; temporal rows refine
/// `nt` on the reference space grid. Orders are reported, not asserted.
fn state_self_convergence(configs: &[ProblemConfig], reference_n: usize, refine: usize, out: &Path) -> Result<()> {
    let finest = configs.last().expect("levels");
    if !reference_n.is_multiple_of(finest.grid.nx) || finest.grid.nx != finest.grid.ny {
        return Err(CliError::Validation(
            "checks: self_convergence.reference_n must be a multiple of nx on a square grid".into(),
        ));
    }
    let ref_nt = finest.time.nt * refine;
    let ref_cfg = finest.at_resolution(reference_n, ref_nt);
    let ref_setup = Setup::build(&ref_cfg)?;
    let reference = solve_state(&ref_setup.problem, &ref_setup.control).context("reference solve")?;
    let mut t = Csv::new(&["study", "n", "nt", "phi_error", "v_error", "phi_order", "v_order"]);
    for (study, runs) in [
        ("space", configs.iter().map(|c| c.at_resolution(c.grid.nx, ref_nt)).collect::<Vec<_>>()),
        ("time", configs.iter().map(|c| c.at_resolution(reference_n, c.time.nt)).collect()),
    ] {
        let mut errs: Vec<(f64, f64)> = Vec::new();
        for c in &runs {
            let setup = Setup::build(c)?;
            let traj = solve_state(&setup.problem, &setup.control).context("forward solve")?;
            errs.push(sup_error(&traj, &reference, ref_nt / c.time.nt));
        }
        for (k, (c, e)) in runs.iter().zip(&errs).enumerate() {
            let order = |sel: fn(&(f64, f64)) -> f64| {
                k.checked_sub(1).map(|i| (sel(&errs[i]) / sel(e)).ln() / 2f64.ln())
            };
            t.row(&[
                study.into(),
                c.grid.nx.into(),
                c.time.nt.into(),
                e.0.into(),
                e.1.into(),
                order(|x| x.0).into(),
                order(|x| x.1).into(),
            ]);
        }
    }
    t.write(&out.join("state_convergence.csv"))
}
