//! Cost functional, reduced gradient, admissible set and the projected
//! gradient optimizer.
//!
//! The control `u` lives on time nodes `1..=nt` and is integrated with the
//! rectangle rule; `v0` is measured in the V norm. The gradient keeps `u` as
//! an L2(Q) representative and lifts the `v0` part to V with the Riesz map.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{riesz_v, Field, GridSpec, Metric};
use crate::sensitivity::{adjoint_solve_discrete, GradientSeeds};
use crate::state::{solve_state, Problem, StateTrajectory, TimeGrid};

/// Distributed source `u` (one field per step, node `n + 1` in slot `n`) and
/// initial temperature `v0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPair {
    pub u: Vec<Field>,
    pub v0: Field,
}

impl ControlPair {
    pub fn zeros(grid: &GridSpec, nt: usize) -> Self {
        ControlPair { u: vec![grid.zeros(); nt], v0: grid.zeros() }
    }

    pub fn constant(grid: &GridSpec, nt: usize, u: f64, v0: f64) -> Self {
        ControlPair { u: vec![grid.constant(u); nt], v0: grid.constant(v0) }
    }

    pub fn check(&self, grid: &GridSpec, nt: usize) -> Result<()> {
        if self.u.len() != nt {
            return Err(Error::ShapeMismatch { expected: nt, found: self.u.len() });
        }
        grid.check(&self.v0)?;
        for u in &self.u {
            grid.check(u)?;
            if !u.is_finite() {
                return Err(Error::NonFinite("u"));
            }
        }
        if !self.v0.is_finite() {
            return Err(Error::NonFinite("v0"));
        }
        Ok(())
    }

    /// Product inner product: rectangle-rule L2(Q) on `u` plus V on `v0`.
    pub fn dot(&self, other: &ControlPair, grid: &GridSpec, tau: f64) -> f64 {
        let mut acc = grid.dot(&self.v0, &other.v0, Metric::V);
        for (a, b) in self.u.iter().zip(&other.u) {
            acc += tau * grid.dot_l2(a, b);
        }
        acc
    }

    pub fn norm(&self, grid: &GridSpec, tau: f64) -> f64 {
        libm::sqrt(self.dot(self, grid, tau).max(0.0))
    }

    /// `self + a * x` with `x` given as a gradient pair.
    pub fn step(&self, a: f64, g: &GradientPair) -> ControlPair {
        let mut out = self.clone();
        for (u, gu) in out.u.iter_mut().zip(&g.g_u) {
            u.axpy(a, gu);
        }
        out.v0.axpy(a, &g.g_v);
        out
    }

    pub fn sub(&self, other: &ControlPair) -> ControlPair {
        ControlPair {
            u: self.u.iter().zip(&other.u).map(|(a, b)| a.sub(b)).collect(),
            v0: self.v0.sub(&other.v0),
        }
    }
}

/// Weights and targets of the tracking functional.
///
/// `k = [k1, ..., k6]` multiply, in order: `phi` over Q, `phi(T)`, `w` over
/// Q, `w(T)`, `v` over Q, `v(T)`. Space-time targets hold `nt + 1` fields.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    pub k: [f64; 6],
    pub nu1: f64,
    pub nu2: f64,
    pub phi_q: Vec<Field>,
    pub w_q: Vec<Field>,
    pub wprime_q: Vec<Field>,
    pub phi_omega: Field,
    pub w_omega: Field,
    pub wprime_omega: Field,
}

impl CostSpec {
    /// Weights with all targets zero.
    pub fn with_zero_targets(grid: &GridSpec, nt: usize, k: [f64; 6], nu1: f64, nu2: f64) -> Result<Self> {
        let spec = CostSpec {
            k,
            nu1,
            nu2,
            phi_q: vec![grid.zeros(); nt + 1],
            w_q: vec![grid.zeros(); nt + 1],
            wprime_q: vec![grid.zeros(); nt + 1],
            phi_omega: grid.zeros(),
            w_omega: grid.zeros(),
            wprime_omega: grid.zeros(),
        };
        spec.validate(grid, nt)?;
        Ok(spec)
    }

    /// Targets read off a trajectory, so that this trajectory has zero
    /// tracking cost.
    pub fn tracking(traj: &StateTrajectory, k: [f64; 6], nu1: f64, nu2: f64) -> Result<Self> {
        let nt = traj.time.nt;
        let spec = CostSpec {
            k,
            nu1,
            nu2,
            phi_q: traj.phi.clone(),
            w_q: traj.w.clone(),
            wprime_q: traj.v.clone(),
            phi_omega: traj.phi[nt].clone(),
            w_omega: traj.w[nt].clone(),
            wprime_omega: traj.v[nt].clone(),
        };
        spec.validate(&traj.grid, nt)?;
        Ok(spec)
    }

    pub fn validate(&self, grid: &GridSpec, nt: usize) -> Result<()> {
        const NAMES: [&str; 6] = ["k1", "k2", "k3", "k4", "k5", "k6"];
        for (name, &k) in NAMES.iter().zip(&self.k) {
            if !(k >= 0.0 && k.is_finite()) {
                return Err(Error::BadParameter { name, value: k });
            }
        }
        for (name, v) in [("nu1", self.nu1), ("nu2", self.nu2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::BadParameter { name, value: v });
            }
        }
        if self.k.iter().all(|&k| k == 0.0) && self.nu1 == 0.0 && self.nu2 == 0.0 {
            return Err(Error::BadParameter { name: "cost weights (all zero)", value: 0.0 });
        }
        self.validate_shapes(grid, nt)
    }

    pub(crate) fn validate_shapes(&self, grid: &GridSpec, nt: usize) -> Result<()> {
        for series in [&self.phi_q, &self.w_q, &self.wprime_q] {
            if series.len() != nt + 1 {
                return Err(Error::ShapeMismatch { expected: nt + 1, found: series.len() });
            }
            for f in series {
                grid.check(f)?;
            }
        }
        grid.check(&self.phi_omega)?;
        grid.check(&self.w_omega)?;
        grid.check(&self.wprime_omega)
    }
}

/// Discrete cost: trapezoid in time for the tracking integrals, terminal
/// terms at node `nt`, rectangle rule for the `u` penalty, V norm for `v0`.
pub fn cost_eval(traj: &StateTrajectory, control: &ControlPair, cost: &CostSpec) -> Result<f64> {
    let grid = &traj.grid;
    let time: &TimeGrid = &traj.time;
    let nt = time.nt;
    let tau = time.tau();
    if traj.nodes() != nt + 1 {
        return Err(Error::ShapeMismatch { expected: nt + 1, found: traj.nodes() });
    }
    control.check(grid, nt)?;
    cost.validate_shapes(grid, nt)?;
    let [k1, k2, k3, k4, k5, k6] = cost.k;
    let sq = |a: &Field, b: &Field| {
        let d = a.sub(b);
        grid.dot_l2(&d, &d)
    };
    let mut tracking = 0.0;
    for n in 0..=nt {
        let wt = if n == 0 || n == nt { 0.5 * tau } else { tau };
        let mut node = 0.0;
        if k1 != 0.0 {
            node += k1 * sq(&traj.phi[n], &cost.phi_q[n]);
        }
        if k3 != 0.0 {
            node += k3 * sq(&traj.w[n], &cost.w_q[n]);
        }
        if k5 != 0.0 {
            node += k5 * sq(&traj.v[n], &cost.wprime_q[n]);
        }
        tracking += wt * node;
    }
    let terminal = k2 * sq(&traj.phi[nt], &cost.phi_omega)
        + k4 * sq(&traj.w[nt], &cost.w_omega)
        + k6 * sq(&traj.v[nt], &cost.wprime_omega);
    let u_sq: f64 = control.u.iter().map(|u| tau * grid.dot_l2(u, u)).sum();
    let v_sq = grid.dot(&control.v0, &control.v0, Metric::V);
    Ok(0.5 * (tracking + terminal) + 0.5 * cost.nu1 * u_sq + 0.5 * cost.nu2 * v_sq)
}

/// Reduced cost value together with the trajectory that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub trajectory: StateTrajectory,
}

pub fn reduced_cost(control: &ControlPair, problem: &Problem, cost: &CostSpec) -> Result<Evaluation> {
    let trajectory = solve_state(problem, control)?;
    let value = cost_eval(&trajectory, control, cost)?;
    Ok(Evaluation { value, trajectory })
}

/// Reduced gradient: `g_u` is an L2(Q) representative, `g_v` a V
/// representative.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientPair {
    pub g_u: Vec<Field>,
    pub g_v: Field,
}

impl GradientPair {
    /// Directional derivative along `d`.
    pub fn apply(&self, d: &ControlPair, grid: &GridSpec, tau: f64) -> f64 {
        let mut acc = grid.dot(&self.g_v, &d.v0, Metric::V);
        for (g, h) in self.g_u.iter().zip(&d.u) {
            acc += tau * grid.dot_l2(g, h);
        }
        acc
    }

    pub fn norm(&self, grid: &GridSpec, tau: f64) -> f64 {
        let as_pair = ControlPair { u: self.g_u.clone(), v0: self.g_v.clone() };
        as_pair.norm(grid, tau)
    }
}

/// `g_u = seed_u + nu1 u`, `g_v = nu2 v0 + riesz_v(seed_v0)`.
pub fn assemble_gradient(
    seeds: &GradientSeeds,
    control: &ControlPair,
    cost: &CostSpec,
    grid: &GridSpec,
    tol: f64,
) -> Result<GradientPair> {
    let g_u = seeds
        .u
        .iter()
        .zip(&control.u)
        .map(|(s, u)| s.zip_map(u, |s, u| s + cost.nu1 * u))
        .collect();
    let mut g_v = riesz_v(grid, &seeds.v0, tol)?;
    g_v.axpy(cost.nu2, &control.v0);
    Ok(GradientPair { g_u, g_v })
}

/// Gradient at a point whose trajectory is already known.
pub fn gradient_at(
    trajectory: &StateTrajectory,
    control: &ControlPair,
    problem: &Problem,
    cost: &CostSpec,
) -> Result<GradientPair> {
    let (seeds, _) = adjoint_solve_discrete(trajectory, problem, cost)?;
    assemble_gradient(&seeds, control, cost, &problem.grid, problem.opts.cg_tol)
}

pub fn reduced_gradient(control: &ControlPair, problem: &Problem, cost: &CostSpec) -> Result<GradientPair> {
    let eval = reduced_cost(control, problem, cost)?;
    gradient_at(&eval.trajectory, control, problem, cost)
}

/// Box constraints on `u` and `v0` plus a V-norm ball of radius `radius` on `v0`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibleSet {
    pub u_lo: Vec<Field>,
    pub u_hi: Vec<Field>,
    pub v_lo: Field,
    pub v_hi: Field,
    pub radius: f64,
}

/// Maximum number of scale-and-clamp rounds in the `v0` projection.
pub const BALL_PROJECTION_ROUNDS: usize = 50;
const BALL_TOL: f64 = 1e-10;

impl AdmissibleSet {
    pub fn constant(
        grid: &GridSpec,
        nt: usize,
        (u_lo, u_hi): (f64, f64),
        (v_lo, v_hi): (f64, f64),
        radius: f64,
    ) -> Result<Self> {
        let set = AdmissibleSet {
            u_lo: vec![grid.constant(u_lo); nt],
            u_hi: vec![grid.constant(u_hi); nt],
            v_lo: grid.constant(v_lo),
            v_hi: grid.constant(v_hi),
            radius,
        };
        set.validate(grid, nt)?;
        Ok(set)
    }

    pub fn validate(&self, grid: &GridSpec, nt: usize) -> Result<()> {
        if !(self.radius > 0.0) {
            return Err(Error::BadParameter { name: "M", value: self.radius });
        }
        if self.u_lo.len() != nt || self.u_hi.len() != nt {
            return Err(Error::ShapeMismatch { expected: nt, found: self.u_lo.len().min(self.u_hi.len()) });
        }
        for (lo, hi) in self.u_lo.iter().zip(&self.u_hi) {
            grid.check(lo)?;
            grid.check(hi)?;
            if lo.iter().zip(hi.iter()).any(|(a, b)| !(a <= b)) {
                return Err(Error::InfeasibleSet("u_lo > u_hi"));
            }
        }
        grid.check(&self.v_lo)?;
        grid.check(&self.v_hi)?;
        if self.v_lo.iter().zip(self.v_hi.iter()).any(|(a, b)| !(a <= b)) {
            return Err(Error::InfeasibleSet("v_lo > v_hi"));
        }
        let anchor = self.anchor();
        if grid.norm(&anchor, Metric::V) > self.radius {
            return Err(Error::InfeasibleSet("clamp of zero initial temperature lies outside the ball"));
        }
        Ok(())
    }

    /// Box-feasible point of smallest magnitude for `v0`: the clamp of zero.
    pub fn anchor(&self) -> Field {
        self.v_lo.zip_map(&self.v_hi, |lo, hi| 0.0f64.clamp(lo, hi))
    }

    /// Box feasibility is checked exactly, the ball up to `1e-10` relative.
    pub fn contains(&self, control: &ControlPair, grid: &GridSpec) -> bool {
        let in_box = |x: &[f64], lo: &[f64], hi: &[f64]| {
            x.iter().zip(lo).zip(hi).all(|((&x, &l), &h)| l <= x && x <= h)
        };
        control.u.len() == self.u_lo.len()
            && control
                .u
                .iter()
                .zip(self.u_lo.iter().zip(&self.u_hi))
                .all(|(u, (lo, hi))| in_box(u, lo, hi))
            && in_box(&control.v0, &self.v_lo, &self.v_hi)
            && grid.norm(&control.v0, Metric::V) <= self.radius * (1.0 + BALL_TOL)
    }
}

fn clamp_field(x: &[f64], lo: &[f64], hi: &[f64]) -> Field {
    x.iter().zip(lo).zip(hi).map(|((&x, &l), &h)| x.clamp(l, h)).collect::<Vec<_>>().into()
}

/// Clamp `u` and `v0` to their boxes, then pull `v0` toward the anchor until
/// it fits in the ball.
///
/// The box part is the exact projection; the ball part is an approximation
/// of the V-metric projection (see the module docs of the CLI for how
/// optimality is certified instead).
pub fn project_admissible(control: &ControlPair, set: &AdmissibleSet, grid: &GridSpec) -> Result<ControlPair> {
    let u = control
        .u
        .iter()
        .zip(set.u_lo.iter().zip(&set.u_hi))
        .map(|(u, (lo, hi))| clamp_field(u, lo, hi))
        .collect();
    let mut v = clamp_field(&control.v0, &set.v_lo, &set.v_hi);
    let m = set.radius;
    let mut norm = grid.norm(&v, Metric::V);
    if norm > m {
        let a = set.anchor();
        let a_norm = grid.norm(&a, Metric::V);
        if a_norm > m {
            return Err(Error::BallProjectionStall { norm: a_norm, radius: m });
        }
        let mut rounds = 0;
        while norm > m * (1.0 + BALL_TOL) {
            if rounds == BALL_PROJECTION_ROUNDS {
                return Err(Error::BallProjectionStall { norm, radius: m });
            }
            // largest t in [0, 1] with |a + t (v - a)|_V = M
            let d = v.sub(&a);
            let dd = grid.dot(&d, &d, Metric::V);
            let ad = grid.dot(&a, &d, Metric::V);
            let disc = (ad * ad - dd * (a_norm * a_norm - m * m)).max(0.0);
            let t = ((-ad + libm::sqrt(disc)) / dd).clamp(0.0, 1.0);
            let mut next = a.clone();
            next.axpy(t, &d);
            // shave off rounding so the ball test holds without tolerance
            if grid.norm(&next, Metric::V) > m {
                let mut shrink = t;
                while shrink > 0.0 {
                    shrink *= 1.0 - 1e-13;
                    next = a.clone();
                    next.axpy(shrink, &d);
                    if grid.norm(&next, Metric::V) <= m {
                        break;
                    }
                }
            }
            v = clamp_field(&next, &set.v_lo, &set.v_hi);
            norm = grid.norm(&v, Metric::V);
            rounds += 1;
        }
    }
    Ok(ControlPair { u, v0: v })
}

/// `|x - P(x - s g)| / s` with the product norm (L2(Q) for `u`, V for `v0`).
///
/// Returns `f64::INFINITY` if the projection stalls.
pub fn stationarity_residual(
    control: &ControlPair,
    grad: &GradientPair,
    set: &AdmissibleSet,
    s: f64,
    grid: &GridSpec,
    tau: f64,
) -> f64 {
    match project_admissible(&control.step(-s, grad), set, grid) {
        Ok(p) => control.sub(&p).norm(grid, tau) / s,
        Err(_) => f64::INFINITY,
    }
}

/// Same as [`stationarity_residual`] restricted to the `u` component.
pub fn stationarity_residual_u(
    control: &ControlPair,
    grad: &GradientPair,
    set: &AdmissibleSet,
    s: f64,
    grid: &GridSpec,
    tau: f64,
) -> f64 {
    let mut acc = 0.0;
    for n in 0..control.u.len() {
        let mut trial = control.u[n].clone();
        trial.axpy(-s, &grad.g_u[n]);
        let d = control.u[n].sub(&clamp_field(&trial, &set.u_lo[n], &set.u_hi[n]));
        acc += tau * grid.dot_l2(&d, &d);
    }
    libm::sqrt(acc) / s
}

/// L2(Q) distance between `u` and `clamp(-q / nu1)`, with `q = g_u - nu1 u`
/// the adjoint part of the gradient. Zero exactly at points satisfying the
/// pointwise projection formula for the optimal source.
pub fn projection_formula_residual(
    control: &ControlPair,
    grad: &GradientPair,
    set: &AdmissibleSet,
    nu1: f64,
    grid: &GridSpec,
    tau: f64,
) -> Option<f64> {
    if !(nu1 > 0.0) {
        return None;
    }
    let mut acc = 0.0;
    for n in 0..control.u.len() {
        let u = &control.u[n];
        let target: Field = (0..u.len())
            .map(|k| {
                let q = grad.g_u[n][k] - nu1 * u[k];
                (-q / nu1).clamp(set.u_lo[n][k], set.u_hi[n][k])
            })
            .collect::<Vec<_>>()
            .into();
        let d = u.sub(&target);
        acc += tau * grid.dot_l2(&d, &d);
    }
    Some(libm::sqrt(acc))
}

/// Standard normal draw by Box-Muller.
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
}

fn sample_box(rng: &mut ChaCha8Rng, lo: &[f64], hi: &[f64], vertex: bool) -> Field {
    lo.iter()
        .zip(hi)
        .map(|(&l, &h)| {
            if vertex {
                if rng.gen::<bool>() {
                    h
                } else {
                    l
                }
            } else {
                let (mid, width) = if (h - l).is_finite() { (0.5 * (l + h), 0.25 * (h - l)) } else { (0.0, 1.0) };
                (mid + width * normal(rng)).clamp(l, h)
            }
        })
        .collect::<Vec<_>>()
        .into()
}

/// One random feasible control; sample `index` uses its own ChaCha stream so
/// the draw does not depend on evaluation order.
pub fn sample_admissible(set: &AdmissibleSet, grid: &GridSpec, seed: u64, index: u64) -> Result<ControlPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let vertex = index.is_multiple_of(2);
    let u = set.u_lo.iter().zip(&set.u_hi).map(|(lo, hi)| sample_box(&mut rng, lo, hi, vertex)).collect();
    let v0 = sample_box(&mut rng, &set.v_lo, &set.v_hi, vertex);
    project_admissible(&ControlPair { u, v0 }, set, grid)
}

/// Minimum over `n_samples` random feasible controls of
/// `<g_u, u - u_bar>_L2(Q) + <g_v, v0 - v0_bar>_V`.
///
/// Samples whose ball projection stalls are skipped; with no usable sample
/// the result is `f64::INFINITY`.
pub fn check_vi(
    control: &ControlPair,
    grad: &GradientPair,
    set: &AdmissibleSet,
    n_samples: usize,
    seed: u64,
    grid: &GridSpec,
    tau: f64,
) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..n_samples as u64 {
        if let Ok(sample) = sample_admissible(set, grid, seed, i) {
            best = best.min(grad.apply(&sample.sub(control), grid, tau));
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizeOptions {
    pub max_iters: usize,
    pub stationarity_tol: f64,
    pub armijo_sigma: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
    pub vi_samples: usize,
    pub seed: u64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions {
            max_iters: 200,
            stationarity_tol: 1e-6,
            armijo_sigma: 1e-4,
            backtrack: 0.5,
            max_backtracks: 60,
            vi_samples: 100,
            seed: 0,
        }
    }
}

/// One row of the optimization history. Row 0 is the (projected) initial
/// point; row `k` the iterate accepted at iteration `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub j: f64,
    pub stationarity: f64,
    pub step: f64,
    pub armijo_backtracks: usize,
    pub vi_min: f64,
    pub cor_residual: Option<f64>,
    pub feasible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certificates {
    pub stationarity: f64,
    pub cor_residual: Option<f64>,
    pub vi_min: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeReport {
    pub history: Vec<IterationRecord>,
    pub control: ControlPair,
    pub gradient: GradientPair,
    pub value: f64,
    pub trajectory: StateTrajectory,
    pub certificates: Certificates,
    pub converged: bool,
}

/// Projected gradient descent with Barzilai-Borwein trial steps and
/// backtracking on the projected-arc Armijo condition
/// `J(x(s)) <= J(x) - (sigma / s) |x(s) - x|^2`.
pub fn optimize(
    problem: &Problem,
    cost: &CostSpec,
    set: &AdmissibleSet,
    init: &ControlPair,
    opts: &OptimizeOptions,
) -> Result<OptimizeReport> {
    let grid = &problem.grid;
    let nt = problem.time.nt;
    let tau = problem.tau();
    cost.validate(grid, nt)?;
    set.validate(grid, nt)?;
    init.check(grid, nt)?;
    for (name, value) in [
        ("armijo_sigma", opts.armijo_sigma),
        ("backtrack", opts.backtrack),
    ] {
        if !(value > 0.0 && value < 1.0) {
            return Err(Error::BadParameter { name, value });
        }
    }
    if !(opts.stationarity_tol >= 0.0) {
        return Err(Error::BadParameter { name: "stationarity_tol", value: opts.stationarity_tol });
    }

    let mut x = project_admissible(init, set, grid)?;
    let mut eval = reduced_cost(&x, problem, cost)?;
    let mut g = gradient_at(&eval.trajectory, &x, problem, cost)?;
    let record = |iter, j, x: &ControlPair, g: &GradientPair, step, bt| IterationRecord {
        iter,
        j,
        stationarity: stationarity_residual(x, g, set, 1.0, grid, tau),
        step,
        armijo_backtracks: bt,
        vi_min: check_vi(x, g, set, opts.vi_samples, opts.seed, grid, tau),
        cor_residual: projection_formula_residual(x, g, set, cost.nu1, grid, tau),
        feasible: set.contains(x, grid),
    };
    let mut history = vec![record(0, eval.value, &x, &g, 0.0, 0)];
    let g_norm = g.norm(grid, tau);
    let mut s = if g_norm > 0.0 { 1.0 / g_norm } else { 1.0 };
    let mut converged = history[0].stationarity <= opts.stationarity_tol;

    let mut iter = 0;
    while !converged && iter < opts.max_iters {
        iter += 1;
        let mut accepted = None;
        let mut trial_s = s;
        for bt in 0..=opts.max_backtracks {
            let trial = project_admissible(&x.step(-trial_s, &g), set, grid)?;
            let d = trial.sub(&x);
            let d_sq = d.dot(&d, grid, tau);
            if d_sq == 0.0 {
                accepted = Some((trial, None, bt, trial_s));
                break;
            }
            // a step that leaves the solver's domain counts as a failed trial
            if let Ok(e) = reduced_cost(&trial, problem, cost) {
                if e.value <= eval.value - opts.armijo_sigma / trial_s * d_sq {
                    accepted = Some((trial, Some(e), bt, trial_s));
                    break;
                }
            }
            trial_s *= opts.backtrack;
        }
        let Some((x_new, e_new, bt, used_s)) = accepted else {
            return Err(Error::LineSearchFailure { iteration: iter, backtracks: opts.max_backtracks });
        };
        let Some(e_new) = e_new else {
            // projection did not move the point: it is a fixed point for this step
            converged = true;
            break;
        };
        let g_new = gradient_at(&e_new.trajectory, &x_new, problem, cost)?;

        let d = x_new.sub(&x);
        let diff = ControlPair {
            u: g_new.g_u.iter().zip(&g.g_u).map(|(a, b)| a.sub(b)).collect(),
            v0: g_new.g_v.sub(&g.g_v),
        };
        let y_dot = diff.dot(&d, grid, tau);
        let d_sq = d.dot(&d, grid, tau);
        let y_sq = diff.dot(&diff, grid, tau);
        s = if y_dot > 0.0 {
            // adaptive choice between the long and the short BB step
            let long = d_sq / y_dot;
            let short = y_dot / y_sq;
            (if short < 0.5 * long { short } else { long }).clamp(1e-12, 1e12)
        } else {
            (2.0 * used_s).min(1e12)
        };

        x = x_new;
        eval = e_new;
        g = g_new;
        let rec = record(iter, eval.value, &x, &g, used_s, bt);
        converged = rec.stationarity <= opts.stationarity_tol;
        history.push(rec);
    }

    let last = history[history.len() - 1];
    let certificates = Certificates {
        stationarity: last.stationarity,
        cor_residual: last.cor_residual,
        vi_min: last.vi_min,
    };
    Ok(OptimizeReport {
        history,
        control: x,
        gradient: g,
        value: eval.value,
        trajectory: eval.trajectory,
        certificates,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensitivity::GradientSeeds;

    fn unit(n: usize) -> GridSpec {
        GridSpec::new(1.0, 1.0, n, n).unwrap()
    }

    fn fake_trajectory(grid: &GridSpec, nt: usize, t_final: f64, value: f64) -> StateTrajectory {
        StateTrajectory {
            grid: *grid,
            time: TimeGrid::new(t_final, nt).unwrap(),
            phi: vec![grid.constant(value); nt + 1],
            w: vec![grid.constant(value); nt + 1],
            v: vec![grid.constant(value); nt + 1],
            steps: vec![Default::default(); nt],
        }
    }

    #[test]
    fn cost_examples() {
        let g = unit(4);
        let nt = 5;
        let traj = fake_trajectory(&g, nt, 1.0, 0.0);
        let zero = ControlPair::zeros(&g, nt);

        let at_target = CostSpec::with_zero_targets(&g, nt, [1.0; 6], 0.0, 0.0).unwrap();
        assert_eq!(cost_eval(&traj, &zero, &at_target).unwrap(), 0.0);

        let only_nu1 = CostSpec::with_zero_targets(&g, nt, [0.0; 6], 1.0, 0.0).unwrap();
        let ones = ControlPair { u: vec![g.constant(1.0); nt], v0: g.zeros() };
        assert!((cost_eval(&traj, &ones, &only_nu1).unwrap() - 0.5).abs() < 1e-14);

        let mut only_k2 = CostSpec::with_zero_targets(&g, nt, [0.0, 1.0, 0.0, 0.0, 0.0, 0.0], 0.0, 0.0).unwrap();
        only_k2.phi_omega = g.constant(-1.0);
        assert!((cost_eval(&traj, &zero, &only_k2).unwrap() - 0.5).abs() < 1e-14);

        let short = ControlPair::zeros(&g, nt - 1);
        assert!(matches!(cost_eval(&traj, &short, &at_target), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn trapezoid_weights_integrate_linear_in_time_exactly() {
        // phi(t) = t, k1 only: J = 1/2 int_0^1 t^2 dt is not exact, but
        // with the trapezoid rule on phi^2 = t^2 the error is tau^2/12 * [2t]_0^1 / 2
        let g = unit(3);
        let nt = 10;
        let tau = 0.1;
        let mut traj = fake_trajectory(&g, nt, 1.0, 0.0);
        for n in 0..=nt {
            traj.phi[n] = g.constant(n as f64 * tau);
        }
        let cost = CostSpec::with_zero_targets(&g, nt, [1.0, 0.0, 0.0, 0.0, 0.0, 0.0], 0.0, 0.0).unwrap();
        let j = cost_eval(&traj, &ControlPair::zeros(&g, nt), &cost).unwrap();
        let exact = 0.5 / 3.0;
        let trapezoid_error = 0.5 * tau * tau / 6.0;
        assert!((j - exact - trapezoid_error).abs() < 1e-14, "{j}");
    }

    #[test]
    fn cost_weights_all_zero_rejected() {
        let g = unit(3);
        assert!(matches!(
            CostSpec::with_zero_targets(&g, 3, [0.0; 6], 0.0, 0.0),
            Err(Error::BadParameter { .. })
        ));
        assert!(CostSpec::with_zero_targets(&g, 3, [0.0, 0.0, 0.0, 0.0, 0.0, -1.0], 1.0, 0.0).is_err());
    }

    #[test]
    fn cost_invariant_under_grid_symmetry() {
        let g = unit(6);
        let nt = 3;
        let mut traj = fake_trajectory(&g, nt, 0.3, 0.0);
        let mirror = |f: &Field| -> Field {
            let mut out = g.zeros();
            for j in 0..6 {
                for i in 0..6 {
                    out[g.index(5 - i, j)] = f[g.index(i, j)];
                }
            }
            out
        };
        for n in 0..=nt {
            traj.phi[n] = g.sample(|x, y| x * x + (n as f64) * y);
            traj.v[n] = g.sample(|x, y| libm::sin(3.0 * x) * y);
        }
        let control = ControlPair { u: vec![g.sample(|x, y| x - y); nt], v0: g.sample(|x, _| x) };
        let cost = CostSpec::with_zero_targets(&g, nt, [1.0, 2.0, 0.0, 0.0, 3.0, 4.0], 0.5, 0.7).unwrap();
        let j = cost_eval(&traj, &control, &cost).unwrap();
        let mut t2 = traj.clone();
        for n in 0..=nt {
            t2.phi[n] = mirror(&traj.phi[n]);
            t2.v[n] = mirror(&traj.v[n]);
        }
        let c2 = ControlPair { u: control.u.iter().map(mirror).collect(), v0: mirror(&control.v0) };
        let j2 = cost_eval(&t2, &c2, &cost).unwrap();
        assert!((j - j2).abs() <= 1e-13 * j.abs());
    }

    #[test]
    fn gradient_formula_examples() {
        let g = unit(3);
        let nt = 4;
        let seeds = GradientSeeds { u: vec![g.constant(1.0); nt], v0: g.zeros() };
        let control = ControlPair::constant(&g, nt, 2.0, 0.0);
        let mut cost = CostSpec::with_zero_targets(&g, nt, [0.0; 6], 0.1, 0.0).unwrap();
        let grad = assemble_gradient(&seeds, &control, &cost, &g, 1e-12).unwrap();
        for gu in &grad.g_u {
            assert!(gu.iter().all(|&x| (x - 1.2).abs() < 1e-15));
        }
        assert!(grad.g_v.iter().all(|&x| x == 0.0));

        // V representative: <g_v, d>_V = <seed, d>_L2 + nu2 <v0, d>_V
        cost.nu2 = 0.3;
        let seeds = GradientSeeds { u: seeds.u, v0: g.sample(|x, y| libm::cos(3.0 * x) + y) };
        let control = ControlPair { u: control.u, v0: g.sample(|x, y| x * y) };
        let grad = assemble_gradient(&seeds, &control, &cost, &g, 1e-13).unwrap();
        let d = g.sample(|x, y| libm::exp(x - y));
        let lhs = g.dot(&grad.g_v, &d, Metric::V);
        let rhs = g.dot_l2(&seeds.v0, &d) + 0.3 * g.dot(&control.v0, &d, Metric::V);
        assert!((lhs - rhs).abs() < 1e-11 * rhs.abs());
    }

    #[test]
    fn projection_examples() {
        let g = unit(8);
        let nt = 3;
        let set = AdmissibleSet::constant(&g, nt, (-1.0, 1.0), (-1.0, 1.0), 1e6).unwrap();
        let c = ControlPair::constant(&g, nt, 5.0, -3.0);
        let p = project_admissible(&c, &set, &g).unwrap();
        assert!(p.u.iter().all(|u| u.iter().all(|&x| x == 1.0)));
        assert!(p.v0.iter().all(|&x| x == -1.0));

        let feasible = ControlPair {
            u: vec![g.sample(|x, y| 0.5 * libm::sin(5.0 * x * y)); nt],
            v0: g.sample(|x, _| x - 0.5),
        };
        assert_eq!(project_admissible(&feasible, &set, &g).unwrap(), feasible);

        let ball = AdmissibleSet::constant(&g, nt, (-1.0, 1.0), (-1.0, 1.0), 0.5).unwrap();
        let p = project_admissible(&ControlPair::constant(&g, nt, 0.0, 1.0), &ball, &g).unwrap();
        assert!(ball.contains(&p, &g));
        assert!(g.norm(&p.v0, Metric::V) <= 0.5 + 1e-10);
        assert!(p.v0.iter().all(|&x| (-1.0..=1.0).contains(&x)));
    }

    #[test]
    fn ball_projection_with_offset_box() {
        let g = unit(8);
        let set = AdmissibleSet::constant(&g, 1, (-1.0, 1.0), (0.2, 3.0), 0.5).unwrap();
        let v = g.sample(|x, y| 3.0 * libm::sin(7.0 * x) * libm::cos(4.0 * y));
        let p = project_admissible(&ControlPair { u: vec![g.zeros()], v0: v }, &set, &g).unwrap();
        assert!(set.contains(&p, &g));
        let again = project_admissible(&p, &set, &g).unwrap();
        let diff = again.v0.sub(&p.v0).max_abs();
        assert!(diff <= 1e-12, "{diff}");
    }

    #[test]
    fn infeasible_sets_rejected() {
        let g = unit(4);
        assert!(matches!(
            AdmissibleSet::constant(&g, 1, (1.0, -1.0), (0.0, 0.0), 1.0),
            Err(Error::InfeasibleSet(_))
        ));
        // anchor 1 has V norm 1 > M
        assert!(matches!(
            AdmissibleSet::constant(&g, 1, (0.0, 0.0), (1.0, 2.0), 0.5),
            Err(Error::InfeasibleSet(_))
        ));
        let mut set = AdmissibleSet::constant(&g, 1, (0.0, 0.0), (0.0, 2.0), 0.5).unwrap();
        set.v_lo = g.constant(1.0);
        let err = project_admissible(&ControlPair::constant(&g, 1, 0.0, 2.0), &set, &g).unwrap_err();
        assert!(matches!(err, Error::BallProjectionStall { .. }));
    }

    #[test]
    fn stationarity_examples() {
        let g = unit(5);
        let nt = 3;
        let tau = 0.1;
        let set = AdmissibleSet::constant(&g, nt, (-1.0, 1.0), (-1.0, 1.0), 1e6).unwrap();
        let x = ControlPair::constant(&g, nt, 0.2, -0.1);
        let zero = GradientPair { g_u: vec![g.zeros(); nt], g_v: g.zeros() };
        assert_eq!(stationarity_residual(&x, &zero, &set, 1.0, &g, tau), 0.0);

        // injected q; the clamp formula is a fixed point with s = 1 / nu1
        let nu1 = 0.25;
        let q: Vec<Field> = (0..nt).map(|n| g.sample(|x, y| (n as f64 + 1.0) * (x - y))).collect();
        let u: Vec<Field> = q.iter().map(|q| q.map(|q| (-q / nu1).clamp(-1.0, 1.0))).collect();
        let grad = GradientPair {
            g_u: q.iter().zip(&u).map(|(q, u)| q.zip_map(u, |q, u| q + nu1 * u)).collect(),
            g_v: g.zeros(),
        };
        let bar = ControlPair { u, v0: g.zeros() };
        assert!(stationarity_residual_u(&bar, &grad, &set, 1.0 / nu1, &g, tau) <= 1e-10);
        assert!(projection_formula_residual(&bar, &grad, &set, nu1, &g, tau).unwrap() <= 1e-12);
        assert!(projection_formula_residual(&bar, &grad, &set, 0.0, &g, tau).is_none());
    }

    #[test]
    fn vi_examples() {
        let g = unit(4);
        let nt = 2;
        let set = AdmissibleSet::constant(&g, nt, (-1.0, 1.0), (-1.0, 1.0), 1e6).unwrap();
        let x = ControlPair::constant(&g, nt, 0.3, 0.0);
        let zero = GradientPair { g_u: vec![g.zeros(); nt], g_v: g.zeros() };
        assert_eq!(check_vi(&x, &zero, &set, 10, 1, &g, 0.5), 0.0);

        // min 1/2 (u - 3)^2 on [-1, 1] at u = 1; gradient u - 3 = -2 < 0
        let bar = ControlPair::constant(&g, nt, 1.0, 0.0);
        let grad = GradientPair { g_u: vec![g.constant(-2.0); nt], g_v: g.zeros() };
        assert!(check_vi(&bar, &grad, &set, 64, 7, &g, 0.5) >= 0.0);
        let off = ControlPair::constant(&g, nt, 0.0, 0.0);
        let grad_off = GradientPair { g_u: vec![g.constant(-3.0); nt], g_v: g.zeros() };
        assert!(check_vi(&off, &grad_off, &set, 64, 7, &g, 0.5) < 0.0);

        let a = check_vi(&off, &grad_off, &set, 16, 99, &g, 0.5);
        let b = check_vi(&off, &grad_off, &set, 16, 99, &g, 0.5);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn samples_are_feasible() {
        let g = unit(6);
        let set = AdmissibleSet::constant(&g, 3, (-2.0, 0.5), (-1.0, 1.0), 0.8).unwrap();
        for i in 0..20 {
            let s = sample_admissible(&set, &g, 5, i).unwrap();
            assert!(set.contains(&s, &g));
        }
    }
}
