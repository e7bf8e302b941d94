//! Semi-implicit forward solver.
//!
//! One step `n -> n+1` of size `tau`:
//!
//! 1. `phi` step, implicit in `gamma` and in the Laplacian, explicit in the
//!    coupling terms:
//!    `(phi' - phi)/tau - Lap phi' + gamma(phi') + (2/tc) pi(phi) - (1/tc^2) v pi(phi) = 0`,
//!    solved by damped Newton with CG on the SPD Jacobian `I/tau - Lap + gamma'(phi')`.
//! 2. Temperature step, linear and implicit in both flux terms:
//!    `(v' - v)/tau - alpha Lap v' - beta Lap(w + tau v') + (pi_hat(phi') - pi_hat(phi))/tau = u'`,
//!    then `w' = w + tau v'`.
//!
//! The coupling enters the energy equation as an exact difference quotient of
//! `pi_hat`, so integrating step 2 over the domain gives the discrete internal
//! energy balance `int(v' - v) + int(pi_hat(phi') - pi_hat(phi)) = tau int(u')`
//! up to the linear solver tolerance.

use alloc::vec::Vec;

use crate::control::ControlPair;
use crate::error::{Error, Result};
use crate::grid::{pcg_solve, Field, GridSpec, Metric};
use crate::nonlinearity::{CouplingSpec, Order, PotentialSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysParams {
    pub alpha: f64,
    pub beta: f64,
    pub theta_c: f64,
}

impl PhysParams {
    pub fn new(alpha: f64, beta: f64, theta_c: f64) -> Result<Self> {
        for (name, value) in [("alpha", alpha), ("beta", beta), ("theta_c", theta_c)] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::BadParameter { name, value });
            }
        }
        Ok(PhysParams { alpha, beta, theta_c })
    }
}

impl Default for PhysParams {
    fn default() -> Self {
        PhysParams { alpha: 1.0, beta: 1.0, theta_c: 1.0 }
    }
}

/// Uniform time grid with nodes `t_n = n * tau`, `n = 0..=nt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t_final: f64,
    pub nt: usize,
}

impl TimeGrid {
    pub fn new(t_final: f64, nt: usize) -> Result<Self> {
        if !(t_final > 0.0) || !t_final.is_finite() {
            return Err(Error::BadParameter { name: "t_final", value: t_final });
        }
        if nt == 0 {
            return Err(Error::BadParameter { name: "nt", value: 0.0 });
        }
        Ok(TimeGrid { t_final, nt })
    }

    pub fn tau(&self) -> f64 {
        self.t_final / self.nt as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.tau()
    }

    pub fn nodes(&self) -> usize {
        self.nt + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Relative residual target of every CG solve.
    pub cg_tol: f64,
    pub cg_maxit: usize,
    /// Absolute L2 target on the Newton residual of the `phi` step.
    pub newton_tol: f64,
    pub newton_maxit: usize,
    /// Step halvings allowed per Newton update.
    pub max_halvings: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            cg_tol: 1e-12,
            cg_maxit: 5000,
            newton_tol: 1e-11,
            newton_maxit: 30,
            max_halvings: 40,
        }
    }
}

/// Everything the forward map needs except the control.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub grid: GridSpec,
    pub time: TimeGrid,
    pub params: PhysParams,
    pub potential: PotentialSpec,
    pub coupling: CouplingSpec,
    pub phi0: Field,
    pub w0: Field,
    pub opts: SolverOptions,
}

impl Problem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        grid: GridSpec,
        time: TimeGrid,
        params: PhysParams,
        potential: PotentialSpec,
        coupling: CouplingSpec,
        phi0: Field,
        w0: Field,
        opts: SolverOptions,
    ) -> Result<Self> {
        let p = Problem { grid, time, params, potential, coupling, phi0, w0, opts };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        PhysParams::new(self.params.alpha, self.params.beta, self.params.theta_c)?;
        self.grid.check(&self.phi0)?;
        self.grid.check(&self.w0)?;
        if !self.phi0.is_finite() {
            return Err(Error::NonFinite("phi0"));
        }
        if !self.w0.is_finite() {
            return Err(Error::NonFinite("w0"));
        }
        check_interior(&self.potential, &self.phi0)
    }

    pub fn tau(&self) -> f64 {
        self.time.tau()
    }

    /// Copy of the problem on another grid/time resolution with initial
    /// data resampled by `resample`.
    pub fn with_resolution<F>(&self, grid: GridSpec, time: TimeGrid, resample: F) -> Result<Self>
    where
        F: Fn(&GridSpec, &Field) -> Field,
    {
        Problem::new(
            grid,
            time,
            self.params,
            self.potential,
            self.coupling,
            resample(&grid, &self.phi0),
            resample(&grid, &self.w0),
            self.opts,
        )
    }

    /// `phi0' = Lap phi0 - gamma(phi0) - (2/tc) pi(phi0) + (1/tc^2) v0 pi(phi0)`,
    /// the compatibility datum of strong solutions.
    pub fn compatibility_datum(&self, v0: &[f64]) -> Result<Field> {
        let tc = self.params.theta_c;
        let mut out = self.grid.laplacian(&self.phi0);
        for k in 0..out.len() {
            let r = self.phi0[k];
            let pi = self.coupling.pi(r);
            out[k] += -self.potential.gamma(r)? - 2.0 / tc * pi + v0[k] * pi / (tc * tc);
        }
        Ok(out)
    }
}

fn check_interior(potential: &PotentialSpec, phi: &[f64]) -> Result<()> {
    for &r in phi {
        if !potential.admits(r) {
            let (lo, hi) = potential.guarded_interval();
            return Err(Error::DomainViolation { value: r, lo, hi });
        }
    }
    Ok(())
}

/// Solver effort of one time step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepStats {
    pub newton_iters: usize,
    pub cg_iters: usize,
    pub guard_hits: usize,
    /// `tau * int(u_{n+1})`, kept for the balance check.
    pub source_integral: f64,
}

/// Snapshots at every time node plus per-step solver statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrajectory {
    pub grid: GridSpec,
    pub time: TimeGrid,
    pub phi: Vec<Field>,
    pub w: Vec<Field>,
    /// Temperature `dw/dt`.
    pub v: Vec<Field>,
    /// `steps[n]` describes the step from node `n` to `n + 1`.
    pub steps: Vec<StepStats>,
}

impl StateTrajectory {
    pub fn nodes(&self) -> usize {
        self.phi.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhiStepOutcome {
    pub phi: Field,
    pub newton_iters: usize,
    pub cg_iters: usize,
    pub residual: f64,
    /// Damping halvings forced by trial points outside the potential's domain.
    pub guard_hits: usize,
}

/// Implicit `phi` update (Newton on the implicit part).
pub fn phi_step(problem: &Problem, phi_n: &[f64], v_n: &[f64], tau: f64) -> Result<PhiStepOutcome> {
    let grid = &problem.grid;
    grid.check(phi_n)?;
    grid.check(v_n)?;
    let pot = &problem.potential;
    let opts = &problem.opts;
    check_interior(pot, phi_n)?;

    let tc = problem.params.theta_c;
    let inv_tau = 1.0 / tau;
    // time-lagged terms: phi_n / tau minus the explicit coupling
    let mut lagged = Field::zeros(phi_n.len());
    for k in 0..phi_n.len() {
        let pi = problem.coupling.pi(phi_n[k]);
        lagged[k] = phi_n[k] * inv_tau - 2.0 / tc * pi + v_n[k] * pi / (tc * tc);
    }

    let residual = |phi: &[f64], out: &mut Field| {
        grid.laplacian_into(phi, out);
        for k in 0..phi.len() {
            out[k] = phi[k] * inv_tau - out[k] + pot.eval_unchecked(Order::D0, phi[k]) - lagged[k];
        }
    };

    let mut phi = Field::from_vec(phi_n.to_vec());
    let mut f = grid.zeros();
    residual(&phi, &mut f);
    let mut f_norm = grid.norm(&f, Metric::L2);
    let mut cg_iters = 0;
    let lap_diag = grid.neg_laplacian_diagonal();
    let mut jac_diag = grid.zeros();
    let mut precond = grid.zeros();
    let mut trial = grid.zeros();
    let mut f_trial = grid.zeros();
    let mut guard_hits = 0;

    for it in 0..=opts.newton_maxit {
        if f_norm <= opts.newton_tol {
            return Ok(PhiStepOutcome { phi, newton_iters: it, cg_iters, residual: f_norm, guard_hits });
        }
        if it == opts.newton_maxit {
            break;
        }
        for k in 0..phi.len() {
            jac_diag[k] = inv_tau + pot.eval_unchecked(Order::D1, phi[k]);
            precond[k] = jac_diag[k] + lap_diag[k];
        }
        let neg_f = f.scaled(-1.0);
        let solve = pcg_solve(
            grid,
            |x, y| {
                grid.laplacian_into(x, y);
                for k in 0..x.len() {
                    y[k] = jac_diag[k] * x[k] - y[k];
                }
            },
            Some(&precond),
            &neg_f,
            opts.cg_tol,
            opts.cg_maxit,
        )?;
        cg_iters += solve.iterations;
        let delta = solve.solution;
        let delta_norm = grid.norm(&delta, Metric::L2);
        let phi_norm = grid.norm(&phi, Metric::L2);

        let mut lambda = 1.0;
        let mut accepted = false;
        let mut escaped = None;
        for _ in 0..=opts.max_halvings {
            for k in 0..phi.len() {
                trial[k] = phi[k] + lambda * delta[k];
            }
            if let Some(&bad) = trial.iter().find(|&&r| !pot.admits(r)) {
                escaped = Some(bad);
                guard_hits += 1;
                lambda *= 0.5;
                continue;
            }
            residual(&trial, &mut f_trial);
            let trial_norm = grid.norm(&f_trial, Metric::L2);
            if trial_norm < f_norm || lambda * delta_norm <= 1e-13 * (1.0 + phi_norm) {
                accepted = true;
                core::mem::swap(&mut phi, &mut trial);
                core::mem::swap(&mut f, &mut f_trial);
                f_norm = trial_norm;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            if let Some(value) = escaped {
                let (lo, hi) = pot.guarded_interval();
                return Err(Error::DomainViolation { value, lo, hi });
            }
            return Err(Error::NewtonDivergence { iterations: it + 1, residual: f_norm });
        }
        // update at rounding level: nothing more to gain
        if lambda == 1.0 && delta_norm <= 1e-13 * (1.0 + phi_norm) {
            return Ok(PhiStepOutcome { phi, newton_iters: it + 1, cg_iters, residual: f_norm, guard_hits });
        }
    }
    Err(Error::NewtonDivergence { iterations: opts.newton_maxit, residual: f_norm })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThermalStepOutcome {
    pub w: Field,
    pub v: Field,
    pub cg_iters: usize,
}

/// Linear temperature update followed by `w' = w + tau v'`.
#[allow(clippy::too_many_arguments)]
pub fn thermal_step(
    problem: &Problem,
    w_n: &[f64],
    v_n: &[f64],
    phi_n: &[f64],
    phi_np1: &[f64],
    u_np1: &[f64],
    tau: f64,
) -> Result<ThermalStepOutcome> {
    let grid = &problem.grid;
    for f in [w_n, v_n, phi_n, phi_np1, u_np1] {
        grid.check(f)?;
    }
    let beta = problem.params.beta;
    let mut rhs = grid.laplacian(w_n);
    for k in 0..rhs.len() {
        let coupling = problem.coupling.pi_hat(phi_np1[k]) - problem.coupling.pi_hat(phi_n[k]);
        rhs[k] = v_n[k] + tau * beta * rhs[k] - coupling + tau * u_np1[k];
    }
    let v = solve_thermal_operator(problem, &rhs, tau)?;
    let mut w = Field::from_vec(w_n.to_vec());
    w.axpy(tau, &v.0);
    Ok(ThermalStepOutcome { w, v: v.0, cg_iters: v.1 })
}

/// Solves `(I - tau (alpha + tau beta) Lap) x = rhs`.
pub(crate) fn solve_thermal_operator(problem: &Problem, rhs: &[f64], tau: f64) -> Result<(Field, usize)> {
    let grid = &problem.grid;
    let c = tau * (problem.params.alpha + tau * problem.params.beta);
    let out = pcg_solve(
        grid,
        |x, y| {
            grid.laplacian_into(x, y);
            for k in 0..x.len() {
                y[k] = x[k] - c * y[k];
            }
        },
        None,
        rhs,
        problem.opts.cg_tol,
        problem.opts.cg_maxit,
    )?;
    Ok((out.solution, out.iterations))
}

/// Solves `(I/tau - Lap + diag(jac)) x = rhs` with Jacobi preconditioning.
pub(crate) fn solve_phi_operator(
    problem: &Problem,
    gamma_prime: &[f64],
    rhs: &[f64],
    tau: f64,
) -> Result<(Field, usize)> {
    let grid = &problem.grid;
    let inv_tau = 1.0 / tau;
    let lap_diag = grid.neg_laplacian_diagonal();
    let precond = lap_diag.zip_map(gamma_prime, |l, g| l + g + inv_tau);
    let out = pcg_solve(
        grid,
        |x, y| {
            grid.laplacian_into(x, y);
            for k in 0..x.len() {
                y[k] = (inv_tau + gamma_prime[k]) * x[k] - y[k];
            }
        },
        Some(&precond),
        rhs,
        problem.opts.cg_tol,
        problem.opts.cg_maxit,
    )?;
    Ok((out.solution, out.iterations))
}

/// Runs the full forward solve for the given control.
pub fn solve_state(problem: &Problem, control: &ControlPair) -> Result<StateTrajectory> {
    let grid = &problem.grid;
    let nt = problem.time.nt;
    let tau = problem.tau();
    control.check(grid, nt)?;

    let mut phi = Vec::with_capacity(nt + 1);
    let mut w = Vec::with_capacity(nt + 1);
    let mut v = Vec::with_capacity(nt + 1);
    let mut steps = Vec::with_capacity(nt);
    phi.push(problem.phi0.clone());
    w.push(problem.w0.clone());
    v.push(control.v0.clone());

    for n in 0..nt {
        let step = n + 1;
        let ps = phi_step(problem, &phi[n], &v[n], tau).map_err(|e| e.at_step(step))?;
        let u = &control.u[n];
        let ts = thermal_step(problem, &w[n], &v[n], &phi[n], &ps.phi, u, tau)
            .map_err(|e| e.at_step(step))?;
        steps.push(StepStats {
            newton_iters: ps.newton_iters,
            cg_iters: ps.cg_iters + ts.cg_iters,
            guard_hits: ps.guard_hits,
            source_integral: tau * grid.integral(u),
        });
        phi.push(ps.phi);
        w.push(ts.w);
        v.push(ts.v);
    }
    Ok(StateTrajectory { grid: *grid, time: problem.time, phi, w, v, steps })
}

/// Per-node row of the diagnostics table.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepDiagnostics {
    pub step: usize,
    pub time: f64,
    pub min_phi: f64,
    pub max_phi: f64,
    pub l2_phi: f64,
    pub v_norm_phi: f64,
    pub v_l2: f64,
    pub v_norm_v: f64,
    pub v_linf: f64,
    pub newton_iters: usize,
    pub cg_iters: usize,
    /// `int(v' - v) + int(pi_hat(phi') - pi_hat(phi)) - tau int(u')`
    pub energy_residual: f64,
    /// Same identity accumulated from the initial node.
    pub cumulative_balance_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    /// One row per node, row 0 being the initial state.
    pub rows: Vec<StepDiagnostics>,
    pub r_star_low: f64,
    pub r_star_high: f64,
    /// Distance of `[r_star_low, r_star_high]` to the potential's endpoints;
    /// infinite for potentials without singular endpoints.
    pub separation_margin: f64,
    pub separation_breach: bool,
    /// Total Newton domain-guard activations over the run.
    pub guard_hits: usize,
    pub max_energy_residual: f64,
    /// Magnitude of the terms entering the balance identity.
    pub balance_scale: f64,
    /// Discrete version of the a priori bound on phi and w (qualitative).
    pub estimate_monitor: f64,
}

/// Computes norms, separation bounds and balance residuals of a trajectory.
pub fn run_diagnostics(traj: &StateTrajectory, problem: &Problem) -> Diagnostics {
    let grid = &traj.grid;
    let tau = traj.time.tau();
    let cp = &problem.coupling;
    let pot = &problem.potential;
    let pi_hat: Vec<Field> = traj.phi.iter().map(|p| p.map(|r| cp.pi_hat(r))).collect();

    let mut rows = Vec::with_capacity(traj.nodes());
    let mut max_res: f64 = 0.0;
    let mut scale: f64 = 0.0;
    let mut source_total = 0.0;
    let e0 = grid.integral(&traj.v[0]) + grid.integral(&pi_hat[0]);
    for n in 0..traj.nodes() {
        let phi = &traj.phi[n];
        let v = &traj.v[n];
        let mut row = StepDiagnostics {
            step: n,
            time: traj.time.time(n),
            min_phi: phi.min(),
            max_phi: phi.max(),
            l2_phi: grid.norm(phi, Metric::L2),
            v_norm_phi: grid.norm(phi, Metric::V),
            v_l2: grid.norm(v, Metric::L2),
            v_norm_v: grid.norm(v, Metric::V),
            v_linf: v.max_abs(),
            ..Default::default()
        };
        scale = scale.max(
            grid.cell_volume() * (v.iter().map(|x| x.abs()).sum::<f64>() + pi_hat[n].iter().map(|x| x.abs()).sum::<f64>()),
        );
        if n > 0 {
            let st = traj.steps[n - 1];
            row.newton_iters = st.newton_iters;
            row.cg_iters = st.cg_iters;
            let mut acc = 0.0;
            for k in 0..v.len() {
                acc += (v[k] - traj.v[n - 1][k]) + (pi_hat[n][k] - pi_hat[n - 1][k]);
            }
            row.energy_residual = grid.cell_volume() * acc - st.source_integral;
            source_total += st.source_integral;
            let cumulative = grid.integral(v) + grid.integral(&pi_hat[n]) - e0 - source_total;
            row.cumulative_balance_residual = cumulative;
            max_res = max_res.max(row.energy_residual.abs());
        }
        rows.push(row);
    }

    let r_star_low = rows.iter().map(|r| r.min_phi).fold(f64::INFINITY, f64::min);
    let r_star_high = rows.iter().map(|r| r.max_phi).fold(f64::NEG_INFINITY, f64::max);
    let separation_margin = (r_star_low - pot.r_minus).min(pot.r_plus - r_star_high);
    let separation_breach = pot.is_singular() && separation_margin <= pot.interior_margin;

    Diagnostics {
        rows,
        r_star_low,
        r_star_high,
        separation_margin,
        separation_breach,
        guard_hits: traj.steps.iter().map(|s| s.guard_hits).sum(),
        max_energy_residual: max_res,
        balance_scale: 1.0 + scale + source_total.abs(),
        estimate_monitor: estimate_monitor(traj, pot, tau),
    }
}

fn estimate_monitor(traj: &StateTrajectory, pot: &PotentialSpec, tau: f64) -> f64 {
    let grid = &traj.grid;
    let mut dphi_l2 = 0.0;
    let mut lap_l2 = 0.0;
    let mut phi_v: f64 = 0.0;
    let mut gamma_hat: f64 = 0.0;
    let mut v_l2: f64 = 0.0;
    let mut v_v = 0.0;
    let mut w_l2: f64 = 0.0;
    for n in 0..traj.nodes() {
        let phi = &traj.phi[n];
        phi_v = phi_v.max(grid.norm(phi, Metric::V));
        let gh: f64 = phi.iter().map(|&r| pot.eval_unchecked(Order::Hat, r)).sum::<f64>() * grid.cell_volume();
        gamma_hat = gamma_hat.max(gh);
        v_l2 = v_l2.max(grid.norm(&traj.v[n], Metric::L2));
        w_l2 = w_l2.max(grid.norm(&traj.w[n], Metric::L2));
        if n > 0 {
            let d = phi.sub(&traj.phi[n - 1]).scaled(1.0 / tau);
            dphi_l2 += tau * grid.dot_l2(&d, &d);
            let lap = grid.laplacian(phi);
            lap_l2 += tau * grid.dot_l2(&lap, &lap);
            v_v += tau * sq(grid.norm(&traj.v[n], Metric::V));
        }
    }
    libm::sqrt(dphi_l2) + phi_v + libm::sqrt(lap_l2) + libm::sqrt(gamma_hat) + v_l2 + libm::sqrt(v_v) + w_l2
}

/// Discrete analogue of the norm controlled by the continuous dependence
/// estimate for strong solutions, evaluated on the difference of two
/// trajectories on the same grids.
pub fn strong_difference_norm(a: &StateTrajectory, b: &StateTrajectory) -> f64 {
    let grid = &a.grid;
    let tau = a.time.tau();
    let nodes = a.nodes().min(b.nodes());
    let dphi: Vec<Field> = (0..nodes).map(|n| a.phi[n].sub(&b.phi[n])).collect();
    let dw: Vec<Field> = (0..nodes).map(|n| a.w[n].sub(&b.w[n])).collect();
    let dv: Vec<Field> = (0..nodes).map(|n| a.v[n].sub(&b.v[n])).collect();
    let l2 = |f: &[f64]| grid.norm(f, Metric::L2);
    let vn = |f: &[f64]| grid.norm(f, Metric::V);
    let lapn = |f: &[f64]| grid.norm(&grid.laplacian(f), Metric::L2);

    // phi in W^{1,inf}(H) and H^1(V) and L^inf(W)
    let mut dt_max: f64 = 0.0;
    let mut dt_v = 0.0;
    let mut w_max: f64 = 0.0;
    // w in H^2(H) and W^{1,inf}(V) and H^1(W)
    let mut w_h2 = 0.0;
    let mut w_w1inf: f64 = 0.0;
    let mut w_h1w = 0.0;
    for n in 0..nodes {
        w_max = w_max.max(l2(&dphi[n]) + lapn(&dphi[n]));
        w_w1inf = w_w1inf.max(vn(&dw[n]) + vn(&dv[n]));
        if n > 0 {
            let d = dphi[n].sub(&dphi[n - 1]).scaled(1.0 / tau);
            dt_max = dt_max.max(l2(&d));
            dt_v += tau * sq(vn(&d));
            let acc = dv[n].sub(&dv[n - 1]).scaled(1.0 / tau);
            w_h2 += tau * (sq(l2(&acc)) + sq(l2(&dv[n])) + sq(l2(&dw[n])));
            w_h1w += tau
                * (sq(l2(&dv[n])) + sq(lapn(&dv[n])) + sq(l2(&dw[n])) + sq(lapn(&dw[n])));
        }
    }
    dt_max + libm::sqrt(dt_v) + w_max + libm::sqrt(w_h2) + w_w1inf + libm::sqrt(w_h1w)
}

fn sq(x: f64) -> f64 {
    x * x
}

/// Sum of squared L2(Q) norms of the three components, trapezoid in time.
pub fn trajectory_distance(a: &StateTrajectory, b: &StateTrajectory) -> f64 {
    let grid = &a.grid;
    let tau = a.time.tau();
    let last = a.nodes() - 1;
    let mut acc = 0.0;
    for n in 0..a.nodes() {
        let wt = if n == 0 || n == last { 0.5 * tau } else { tau };
        for (x, y) in [(&a.phi[n], &b.phi[n]), (&a.w[n], &b.w[n]), (&a.v[n], &b.v[n])] {
            let d = x.sub(y);
            acc += wt * grid.dot_l2(&d, &d);
        }
    }
    libm::sqrt(acc)
}

/// Rest state of the spatially homogeneous `phi` equation with `v = 0`:
/// a root of `gamma(r) + (2/tc) pi(r)` found by bisection on `[lo, hi]`.
pub fn homogeneous_rest_state(problem: &Problem, lo: f64, hi: f64) -> Result<f64> {
    let tc = problem.params.theta_c;
    let f = |r: f64| -> Result<f64> { Ok(problem.potential.gamma(r)? + 2.0 / tc * problem.coupling.pi(r)) };
    let (mut a, mut b) = (lo, hi);
    let (mut fa, fb) = (f(a)?, f(b)?);
    if fa * fb > 0.0 {
        return Err(Error::BadParameter { name: "bracket", value: fa * fb });
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let fm = f(m)?;
        if fm == 0.0 || (b - a) < 1e-300 {
            return Ok(m);
        }
        if fa * fm < 0.0 {
            b = m;
        } else {
            a = m;
            fa = fm;
        }
        if b - a <= f64::EPSILON * m.abs().max(1e-300) {
            break;
        }
    }
    Ok(0.5 * (a + b))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::presets::CosineProduct;

    pub(crate) fn problem_on(
        n: usize,
        nt: usize,
        t_final: f64,
        potential: PotentialSpec,
        coupling: CouplingSpec,
        phi0: Field,
    ) -> Problem {
        let grid = GridSpec::new(1.0, 1.0, n, n).unwrap();
        let w0 = grid.zeros();
        Problem::new(
            grid,
            TimeGrid::new(t_final, nt).unwrap(),
            PhysParams::default(),
            potential,
            coupling,
            phi0,
            w0,
            SolverOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn phi_step_zero_is_fixed_point() {
        let g = GridSpec::new(1.0, 1.0, 6, 6).unwrap();
        let p = problem_on(6, 1, 0.1, PotentialSpec::regular(), CouplingSpec::affine(0.0, 0.0), g.zeros());
        let out = phi_step(&p, &g.zeros(), &g.zeros(), 0.1).unwrap();
        assert!(out.phi.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn phi_step_scalar_newton_oracle() {
        // x + 0.1 x^3 = 1 by scalar Newton
        let mut x: f64 = 1.0;
        for _ in 0..50 {
            x -= (x + 0.1 * x * x * x - 1.0) / (1.0 + 0.3 * x * x);
        }
        assert!((x + 0.1 * x * x * x - 1.0).abs() < 1e-15 && (x - 0.9217).abs() < 1e-3);
        let g = GridSpec::new(1.0, 1.0, 5, 5).unwrap();
        let p = problem_on(5, 1, 0.1, PotentialSpec::regular(), CouplingSpec::affine(0.0, 0.0), g.constant(1.0));
        let out = phi_step(&p, &g.constant(1.0), &g.zeros(), 0.1).unwrap();
        for &r in out.phi.iter() {
            assert!((r - x).abs() < 1e-12);
        }
    }

    #[test]
    fn phi_step_constant_in_constant_out() {
        let g = GridSpec::new(1.0, 1.0, 8, 8).unwrap();
        let p = problem_on(8, 1, 0.1, PotentialSpec::logarithmic(1.0).unwrap(), CouplingSpec::bounded_smooth(1.3), g.constant(0.4));
        let out = phi_step(&p, &g.constant(0.4), &g.constant(-0.7), 0.05).unwrap();
        let first = out.phi[0];
        assert!(out.phi.iter().all(|&r| (r - first).abs() < 1e-13));
    }

    #[test]
    fn phi_step_rejects_exterior_input() {
        let g = GridSpec::new(1.0, 1.0, 4, 4).unwrap();
        let p = problem_on(4, 1, 0.1, PotentialSpec::logarithmic(1.0).unwrap(), CouplingSpec::default(), g.zeros());
        let res = phi_step(&p, &g.constant(1.0), &g.zeros(), 0.1);
        assert!(matches!(res, Err(Error::DomainViolation { .. })));
    }

    #[test]
    fn thermal_step_examples() {
        let g = GridSpec::new(1.0, 1.0, 6, 6).unwrap();
        let p = problem_on(6, 1, 1.0, PotentialSpec::regular(), CouplingSpec::default(), g.zeros());
        let z = g.zeros();
        let out = thermal_step(&p, &z, &z, &z, &z, &z, 0.1).unwrap();
        assert!(out.v.iter().chain(out.w.iter()).all(|&x| x == 0.0));

        // 0-D recurrence for constant data
        let tau = 0.03;
        let cp = p.coupling;
        let (w, v, a, b, u) = (0.3, -0.2, 0.5, 0.45, 1.7);
        let out = thermal_step(&p, &g.constant(w), &g.constant(v), &g.constant(a), &g.constant(b), &g.constant(u), tau).unwrap();
        let v_ref = v + tau * u - (cp.pi_hat(b) - cp.pi_hat(a));
        let w_ref = w + tau * v_ref;
        for k in 0..g.cells() {
            assert!((out.v[k] - v_ref).abs() <= 1e-12);
            assert!((out.w[k] - w_ref).abs() <= 1e-12);
        }
    }

    #[test]
    fn rest_start_heats_linearly() {
        let g = GridSpec::new(1.0, 1.0, 5, 5).unwrap();
        let nt = 20;
        let p = problem_on(5, nt, 1.0, PotentialSpec::regular(), CouplingSpec::affine(0.0, 0.0), g.zeros());
        let control = ControlPair::constant(&g, nt, 1.0, 0.0);
        let traj = solve_state(&p, &control).unwrap();
        let tau = p.tau();
        for n in 0..=nt {
            for &x in traj.v[n].iter() {
                assert!((x - n as f64 * tau).abs() <= 1e-14, "node {n}");
            }
        }
        for n in 0..nt {
            let expect = traj.w[n].add(&traj.v[n + 1].scaled(tau));
            assert_eq!(expect, traj.w[n + 1]);
        }
    }

    #[test]
    fn stationary_rest_state() {
        let pot = PotentialSpec::regular();
        let cp = CouplingSpec::default();
        let g = GridSpec::new(1.0, 1.0, 6, 6).unwrap();
        let probe = problem_on(6, 1, 1.0, pot, cp, g.zeros());
        let root = homogeneous_rest_state(&probe, 0.5, 3.0).unwrap();
        assert!((root - core::f64::consts::SQRT_2).abs() < 1e-14);
        let nt = 10;
        let p = problem_on(6, nt, 0.5, pot, cp, g.constant(root));
        let traj = solve_state(&p, &ControlPair::zeros(&g, nt)).unwrap();
        for n in 1..=nt {
            assert!(traj.phi[n].sub(&traj.phi[n - 1]).max_abs() <= 1e-12);
            assert!(traj.v[n].max_abs() <= 1e-12);
        }
    }

    #[test]
    fn balance_and_diagnostics() {
        let g = GridSpec::new(1.0, 1.0, 16, 16).unwrap();
        let nt = 20;
        let phi0 = CosineProduct::new(0.0, 0.8, 1.0, 1.0).sample(&g);
        let p = problem_on(16, nt, 0.2, PotentialSpec::logarithmic(1.0).unwrap(), CouplingSpec::default(), phi0);
        let mut control = ControlPair::zeros(&g, nt);
        for (n, u) in control.u.iter_mut().enumerate() {
            *u = CosineProduct::new(0.3, 1.0, 2.0, 1.0).sample(&g).scaled(1.0 - n as f64 / nt as f64);
        }
        control.v0 = CosineProduct::new(0.0, 0.2, 1.0, 0.0).sample(&g);
        let traj = solve_state(&p, &control).unwrap();
        let d = run_diagnostics(&traj, &p);
        assert_eq!(d.rows.len(), nt + 1);
        assert!(d.max_energy_residual <= 1e-10 * d.balance_scale, "{}", d.max_energy_residual);
        let last = d.rows.last().unwrap();
        assert!(last.cumulative_balance_residual.abs() <= nt as f64 * 1e-11 * d.balance_scale);
        assert!(!d.separation_breach);
        assert!(d.r_star_low > -1.0 && d.r_star_high < 1.0);
        assert!(d.estimate_monitor.is_finite());
    }

    #[test]
    fn zero_trajectory_diagnostics() {
        let g = GridSpec::new(1.0, 1.0, 5, 5).unwrap();
        let p = problem_on(5, 4, 1.0, PotentialSpec::regular(), CouplingSpec::default(), g.zeros());
        let traj = solve_state(&p, &ControlPair::zeros(&g, 4)).unwrap();
        let d = run_diagnostics(&traj, &p);
        for r in &d.rows {
            assert_eq!((r.l2_phi, r.v_l2, r.v_linf, r.energy_residual), (0.0, 0.0, 0.0, 0.0));
        }
        assert!(!d.separation_breach);
    }

    #[test]
    fn step_errors_carry_the_step_index() {
        let g = GridSpec::new(1.0, 1.0, 4, 4).unwrap();
        let mut p = problem_on(4, 3, 1.0, PotentialSpec::regular(), CouplingSpec::default(), g.constant(0.5));
        p.opts.newton_maxit = 0;
        let err = solve_state(&p, &ControlPair::zeros(&g, 3)).unwrap_err();
        assert!(matches!(err, Error::AtStep { step: 1, .. }));
        assert!(matches!(err.root(), Error::NewtonDivergence { .. }));
    }

    #[test]
    fn problem_validation() {
        let g = GridSpec::new(1.0, 1.0, 4, 4).unwrap();
        assert!(PhysParams::new(0.0, 1.0, 1.0).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
        let bad = Problem::new(
            g,
            TimeGrid::new(1.0, 2).unwrap(),
            PhysParams::default(),
            PotentialSpec::logarithmic(1.0).unwrap(),
            CouplingSpec::default(),
            g.constant(1.2),
            g.zeros(),
            SolverOptions::default(),
        );
        assert!(matches!(bad, Err(Error::DomainViolation { .. })));
    }
}
