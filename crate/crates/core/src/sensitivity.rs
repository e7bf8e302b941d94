//! Sensitivities of the forward scheme.
//!
//! [`tangent_solve`] is the exact derivative of one forward step applied
//! recursively; [`transpose_solve`] applies the transposes of the same
//! linear maps in reverse order, so the pair passes the dot test to rounding.
//! All cotangents are L2 representatives: a seed `g` pairs with a state
//! perturbation `d` through `<g, d>_L2`, and every operator involved
//! (Laplacian, diagonal scalings) is symmetric in that product.
//!
//! [`adjoint_solve_continuous`] discretizes the backward adjoint system of the
//! PDE directly. It agrees with the discrete transpose only up to the
//! discretization error, which is how the two are cross-checked.

use alloc::vec;
use alloc::vec::Vec;

use crate::control::CostSpec;
use crate::error::{Error, Result};
use crate::grid::{Field, GridSpec, Metric};
use crate::nonlinearity::Order;
use crate::state::{solve_phi_operator, solve_thermal_operator, Problem, StateTrajectory};

/// Perturbation of the controls: `h[n]` acts at node `n + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub h: Vec<Field>,
    pub h0: Field,
}

/// Tangent trajectory `(xi, eta, d eta/dt)` at every node.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedPair {
    pub xi: Vec<Field>,
    pub eta: Vec<Field>,
    pub eta_t: Vec<Field>,
}

/// Cotangent of a full trajectory, one L2 representative per node and
/// component.
#[derive(Debug, Clone, PartialEq)]
pub struct StateCotangent {
    pub phi: Vec<Field>,
    pub w: Vec<Field>,
    pub v: Vec<Field>,
}

/// Derivative of a functional of the state with respect to the controls.
///
/// `u[n]` is the L2(Q) representative at node `n + 1` under the rectangle
/// rule, so the directional derivative along `(h, h0)` is
/// `tau * sum_n <u[n], h[n]>_L2 + <v0, h0>_L2`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSeeds {
    pub u: Vec<Field>,
    pub v0: Field,
}

/// Adjoint variables at every node, with `q_conv = 1 (*) q` (backward time
/// integral) and the source `f_q` of the `q` equation.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointPair {
    pub p: Vec<Field>,
    pub q: Vec<Field>,
    pub q_conv: Vec<Field>,
    pub f_q: Vec<Field>,
}

/// Sign convention for the memory term `beta Lap(1 (*) q)` of the `q` equation.
///
/// `Transposed` is the sign obtained by integrating the linearized energy
/// equation by parts (and the one the discrete transpose converges to);
/// `AsPrinted` keeps the opposite sign of the strong form as commonly stated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MemorySign {
    #[default]
    Transposed,
    AsPrinted,
}

impl Perturbation {
    pub fn zeros(grid: &GridSpec, nt: usize) -> Self {
        Perturbation { h: vec![grid.zeros(); nt], h0: grid.zeros() }
    }

    pub fn scaled(&self, a: f64) -> Self {
        Perturbation {
            h: self.h.iter().map(|f| f.scaled(a)).collect(),
            h0: self.h0.scaled(a),
        }
    }
}

impl StateCotangent {
    pub fn zeros(grid: &GridSpec, nodes: usize) -> Self {
        StateCotangent {
            phi: vec![grid.zeros(); nodes],
            w: vec![grid.zeros(); nodes],
            v: vec![grid.zeros(); nodes],
        }
    }

    /// `sum_n <phi_n, xi_n> + <w_n, eta_n> + <v_n, eta_t_n>` in L2.
    pub fn pair(&self, grid: &GridSpec, lin: &LinearizedPair) -> f64 {
        let mut acc = 0.0;
        for n in 0..self.phi.len() {
            acc += grid.dot_l2(&self.phi[n], &lin.xi[n])
                + grid.dot_l2(&self.w[n], &lin.eta[n])
                + grid.dot_l2(&self.v[n], &lin.eta_t[n]);
        }
        acc
    }
}

impl GradientSeeds {
    pub fn pair(&self, grid: &GridSpec, tau: f64, pert: &Perturbation) -> f64 {
        let mut acc = grid.dot_l2(&self.v0, &pert.h0);
        for (s, h) in self.u.iter().zip(&pert.h) {
            acc += tau * grid.dot_l2(s, h);
        }
        acc
    }
}

/// Base-trajectory coefficients shared by the tangent and its transpose.
struct Linearization {
    /// `gamma'(phi_{n+1})`
    gamma_prime: Vec<Field>,
    /// coefficient of `xi_n` in the right-hand side of the `xi` step
    c_xi: Vec<Field>,
    /// coefficient of `eta_t_n` in the right-hand side of the `xi` step
    d_eta: Vec<Field>,
    /// `pi(phi_n)` at every node
    pi: Vec<Field>,
}

impl Linearization {
    fn new(base: &StateTrajectory, problem: &Problem) -> Result<Self> {
        let nt = base.time.nt;
        let tau = base.time.tau();
        let tc = problem.params.theta_c;
        let pot = &problem.potential;
        let cp = &problem.coupling;
        let mut gamma_prime = Vec::with_capacity(nt);
        let mut c_xi = Vec::with_capacity(nt);
        let mut d_eta = Vec::with_capacity(nt);
        for n in 0..nt {
            let mut gp = base.grid.zeros();
            for (g, &r) in gp.iter_mut().zip(base.phi[n + 1].iter()) {
                *g = pot.gamma_prime(r)?;
            }
            gamma_prime.push(gp);
            let phi = &base.phi[n];
            let v = &base.v[n];
            let mut c = base.grid.zeros();
            let mut d = base.grid.zeros();
            for k in 0..c.len() {
                let dpi = cp.pi_prime(phi[k]);
                c[k] = 1.0 / tau - 2.0 / tc * dpi + v[k] * dpi / (tc * tc);
                d[k] = cp.pi(phi[k]) / (tc * tc);
            }
            c_xi.push(c);
            d_eta.push(d);
        }
        let pi = base.phi.iter().map(|p| p.map(|r| cp.eval(Order::D0, r))).collect();
        Ok(Linearization { gamma_prime, c_xi, d_eta, pi })
    }
}

fn check_base(base: &StateTrajectory, problem: &Problem) -> Result<()> {
    if base.grid != problem.grid || base.time != problem.time || base.nodes() != problem.time.nt + 1 {
        return Err(Error::ShapeMismatch {
            expected: problem.time.nt + 1,
            found: base.nodes(),
        });
    }
    Ok(())
}

/// Exact derivative of the discrete forward map along `pert`.
pub fn tangent_solve(base: &StateTrajectory, problem: &Problem, pert: &Perturbation) -> Result<LinearizedPair> {
    check_base(base, problem)?;
    let grid = &problem.grid;
    let nt = problem.time.nt;
    let tau = problem.tau();
    let beta = problem.params.beta;
    if pert.h.len() != nt {
        return Err(Error::ShapeMismatch { expected: nt, found: pert.h.len() });
    }
    grid.check(&pert.h0)?;
    for h in &pert.h {
        grid.check(h)?;
    }
    let lin = Linearization::new(base, problem)?;

    let mut xi = vec![grid.zeros()];
    let mut eta = vec![grid.zeros()];
    let mut eta_t = vec![pert.h0.clone()];
    for n in 0..nt {
        let rhs = lin.c_xi[n].zip_map(&xi[n], |c, x| c * x).add(&lin.d_eta[n].zip_map(&eta_t[n], |d, e| d * e));
        let (xi_next, _) = solve_phi_operator(problem, &lin.gamma_prime[n], &rhs, tau)?;

        let mut rhs = grid.laplacian(&eta[n]);
        for k in 0..rhs.len() {
            rhs[k] = eta_t[n][k] + tau * beta * rhs[k] - lin.pi[n + 1][k] * xi_next[k]
                + lin.pi[n][k] * xi[n][k]
                + tau * pert.h[n][k];
        }
        let (et_next, _) = solve_thermal_operator(problem, &rhs, tau)?;
        let mut e_next = eta[n].clone();
        e_next.axpy(tau, &et_next);
        xi.push(xi_next);
        eta.push(e_next);
        eta_t.push(et_next);
    }
    Ok(LinearizedPair { xi, eta, eta_t })
}

/// Transpose of [`tangent_solve`] applied to a trajectory cotangent.
///
/// Returns the control seeds and the adjoint variables in the same layout
/// as the continuous adjoint: `q[n]` for `n >= 1` is the seed of the control
/// at node `n`, `q[0]` the seed of `v0`, and `p[n]` the total sensitivity to
/// `xi` at node `n` minus `pi(phi_n) q[n]`.
pub fn transpose_solve(
    base: &StateTrajectory,
    problem: &Problem,
    cot: &StateCotangent,
) -> Result<(GradientSeeds, AdjointPair)> {
    check_base(base, problem)?;
    let grid = &problem.grid;
    let nt = problem.time.nt;
    let tau = problem.tau();
    let beta = problem.params.beta;
    for comp in [&cot.phi, &cot.w, &cot.v] {
        if comp.len() != nt + 1 {
            return Err(Error::ShapeMismatch { expected: nt + 1, found: comp.len() });
        }
    }
    let lin = Linearization::new(base, problem)?;

    let mut seeds_u = vec![grid.zeros(); nt];
    let mut p = vec![grid.zeros(); nt + 1];
    let mut q = vec![grid.zeros(); nt + 1];

    let mut a_xi = cot.phi[nt].clone();
    let mut a_eta = cot.w[nt].clone();
    let mut a_et = cot.v[nt].clone();
    for n in (0..nt).rev() {
        // eta_{n+1} = eta_n + tau eta_t_{n+1}
        let mut et_total = a_et;
        et_total.axpy(tau, &a_eta);
        let (s, _) = solve_thermal_operator(problem, &et_total, tau)?;

        let mut xi_total = a_xi;
        for k in 0..xi_total.len() {
            xi_total[k] -= lin.pi[n + 1][k] * s[k];
        }
        let (r, _) = solve_phi_operator(problem, &lin.gamma_prime[n], &xi_total, tau)?;

        let lap_s = grid.laplacian(&s);
        let mut next_xi = cot.phi[n].clone();
        let mut next_eta = cot.w[n].clone();
        let mut next_et = cot.v[n].clone();
        for k in 0..next_xi.len() {
            next_xi[k] += lin.c_xi[n][k] * r[k] + lin.pi[n][k] * s[k];
            next_eta[k] += a_eta[k] + tau * beta * lap_s[k];
            next_et[k] += s[k] + lin.d_eta[n][k] * r[k];
        }
        p[n + 1] = xi_total;
        q[n + 1] = s.clone();
        seeds_u[n] = s;
        a_xi = next_xi;
        a_eta = next_eta;
        a_et = next_et;
    }
    // node 0 gets the same coupling correction as the later nodes, with the
    // v0 seed in the role of the step seed
    p[0] = a_xi;
    for k in 0..p[0].len() {
        p[0][k] -= lin.pi[0][k] * a_et[k];
    }
    q[0] = a_et.clone();
    let q_conv = circledast_accumulate(&q, tau);
    let seeds = GradientSeeds { u: seeds_u, v0: a_et };
    let pair = AdjointPair { p, q, q_conv, f_q: Vec::new() };
    Ok((seeds, pair))
}

/// L2 representatives of the derivative of the tracking part of the cost
/// (everything except the control penalties) with respect to the state.
pub fn cost_cotangent(base: &StateTrajectory, cost: &CostSpec) -> StateCotangent {
    let grid = &base.grid;
    let nt = base.time.nt;
    let tau = base.time.tau();
    let [k1, k2, k3, k4, k5, k6] = cost.k;
    let mut cot = StateCotangent::zeros(grid, nt + 1);
    for n in 0..=nt {
        let wt = if n == 0 || n == nt { 0.5 * tau } else { tau };
        cot.phi[n] = base.phi[n].sub(&cost.phi_q[n]).scaled(k1 * wt);
        cot.w[n] = base.w[n].sub(&cost.w_q[n]).scaled(k3 * wt);
        cot.v[n] = base.v[n].sub(&cost.wprime_q[n]).scaled(k5 * wt);
    }
    cot.phi[nt].axpy(k2, &base.phi[nt].sub(&cost.phi_omega));
    cot.w[nt].axpy(k4, &base.w[nt].sub(&cost.w_omega));
    cot.v[nt].axpy(k6, &base.v[nt].sub(&cost.wprime_omega));
    cot
}

/// Reverse sweep seeded by the cost: exact gradient seeds of the discrete
/// reduced cost (control penalties excluded).
pub fn adjoint_solve_discrete(
    base: &StateTrajectory,
    problem: &Problem,
    cost: &CostSpec,
) -> Result<(GradientSeeds, AdjointPair)> {
    cost.validate_shapes(&problem.grid, problem.time.nt)?;
    let cot = cost_cotangent(base, cost);
    let (seeds, mut pair) = transpose_solve(base, problem, &cot)?;
    pair.f_q = adjoint_source(base, cost);
    Ok((seeds, pair))
}

/// `f_q = k3 (1 (*) (w - w_Q)) + k5 (v - w'_Q) + k4 (w(T) - w_Omega)` at every node.
pub fn adjoint_source(base: &StateTrajectory, cost: &CostSpec) -> Vec<Field> {
    let tau = base.time.tau();
    let nt = base.time.nt;
    let [_, _, k3, k4, k5, _] = cost.k;
    let misfit: Vec<Field> = (0..=nt).map(|n| base.w[n].sub(&cost.w_q[n])).collect();
    let conv = circledast_accumulate(&misfit, tau);
    let terminal = base.w[nt].sub(&cost.w_omega);
    (0..=nt)
        .map(|n| {
            let mut f = conv[n].scaled(k3);
            f.axpy(k5, &base.v[n].sub(&cost.wprime_q[n]));
            f.axpy(k4, &terminal);
            f
        })
        .collect()
}

/// Backward rectangle rule for `(1 (*) f)(t_n) = int_{t_n}^T f`:
/// `out[N] = 0`, `out[n] = out[n+1] + tau * f[n+1]`.
pub fn circledast_accumulate(series: &[Field], tau: f64) -> Vec<Field> {
    let nodes = series.len();
    if nodes == 0 {
        return Vec::new();
    }
    let mut out = vec![Field::zeros(series[0].len()); nodes];
    for n in (0..nodes - 1).rev() {
        let mut acc = out[n + 1].clone();
        acc.axpy(tau, &series[n + 1]);
        out[n] = acc;
    }
    out
}

/// Semi-implicit backward discretization of the continuous adjoint system.
///
/// Per step `n+1 -> n`: the memory term uses the accumulator built from
/// later nodes, `q_n` is implicit in `-alpha Lap`, and `p_n` is implicit in
/// `-Lap + gamma'(phi_n)` with the coupling terms lagged to `p_{n+1}`.
pub fn adjoint_solve_continuous(
    base: &StateTrajectory,
    problem: &Problem,
    cost: &CostSpec,
    sign: MemorySign,
) -> Result<AdjointPair> {
    check_base(base, problem)?;
    cost.validate_shapes(&problem.grid, problem.time.nt)?;
    let grid = &problem.grid;
    let nt = problem.time.nt;
    let tau = problem.tau();
    let tc = problem.params.theta_c;
    let (alpha, beta) = (problem.params.alpha, problem.params.beta);
    let memory = match sign {
        MemorySign::Transposed => beta,
        MemorySign::AsPrinted => -beta,
    };
    let [k1, k2, _, _, _, k6] = cost.k;
    let cp = &problem.coupling;
    let pot = &problem.potential;
    let f_q = adjoint_source(base, cost);

    let mut p = vec![grid.zeros(); nt + 1];
    let mut q = vec![grid.zeros(); nt + 1];
    let mut q_conv = vec![grid.zeros(); nt + 1];
    let temp_misfit = base.v[nt].sub(&cost.wprime_omega);
    q[nt] = temp_misfit.scaled(k6);
    p[nt] = base.phi[nt].sub(&cost.phi_omega).scaled(k2);
    for k in 0..p[nt].len() {
        p[nt][k] -= k6 * cp.pi(base.phi[nt][k]) * temp_misfit[k];
    }

    for n in (0..nt).rev() {
        let mut conv = q_conv[n + 1].clone();
        conv.axpy(tau, &q[n + 1]);
        let phi = &base.phi[n];

        let lap_conv = grid.laplacian(&conv);
        let mut rhs = q[n + 1].clone();
        for k in 0..rhs.len() {
            rhs[k] += tau * (f_q[n][k] + memory * lap_conv[k] + cp.pi(phi[k]) * p[n + 1][k] / (tc * tc));
        }
        let q_n = solve_diffusion(problem, &rhs, tau * alpha)?;

        let mut gp = grid.zeros();
        let mut rhs = grid.zeros();
        for k in 0..rhs.len() {
            let r = phi[k];
            gp[k] = pot.gamma_prime(r)?;
            let dpi = cp.pi_prime(r);
            rhs[k] = p[n + 1][k] / tau + cp.pi(r) * (q[n + 1][k] - q_n[k]) / tau
                + (-2.0 / tc * dpi + base.v[n][k] * dpi / (tc * tc)) * p[n + 1][k]
                + k1 * (r - cost.phi_q[n][k]);
        }
        let (p_n, _) = solve_phi_operator(problem, &gp, &rhs, tau)?;
        p[n] = p_n;
        q[n] = q_n;
        q_conv[n] = conv;
    }
    Ok(AdjointPair { p, q, q_conv, f_q })
}

/// Solves `(I - c Lap) x = rhs`.
fn solve_diffusion(problem: &Problem, rhs: &[f64], c: f64) -> Result<Field> {
    let grid = &problem.grid;
    let out = crate::grid::cg_solve(
        grid,
        |x, y| {
            grid.laplacian_into(x, y);
            for k in 0..x.len() {
                y[k] = x[k] - c * y[k];
            }
        },
        rhs,
        problem.opts.cg_tol,
        problem.opts.cg_maxit,
    )?;
    Ok(out.solution)
}

/// Residuals obtained by substituting `pair` into the backward scheme of
/// [`adjoint_solve_continuous`] (with the memory accumulator rebuilt from
/// `pair.q`), measured in L1(0,T; L2). Returns `(p residual, q residual)`.
///
/// The time L1 norm gives a one-step terminal layer weight `tau`; the
/// discrete transpose has such a layer because its terminal seeds carry
/// `O(tau)` quadrature terms.
pub fn continuous_adjoint_residual(
    base: &StateTrajectory,
    problem: &Problem,
    cost: &CostSpec,
    pair: &AdjointPair,
) -> Result<(f64, f64)> {
    check_base(base, problem)?;
    let grid = &problem.grid;
    let nt = problem.time.nt;
    let tau = problem.tau();
    let tc = problem.params.theta_c;
    let (alpha, beta) = (problem.params.alpha, problem.params.beta);
    let k1 = cost.k[0];
    let cp = &problem.coupling;
    let pot = &problem.potential;
    let f_q = adjoint_source(base, cost);
    let conv = circledast_accumulate(&pair.q, tau);
    let (p, q) = (&pair.p, &pair.q);
    let mut rp = 0.0;
    let mut rq = 0.0;
    for n in 0..nt {
        let phi = &base.phi[n];
        let lap_q = grid.laplacian(&q[n]);
        let lap_conv = grid.laplacian(&conv[n]);
        let lap_p = grid.laplacian(&p[n]);
        let mut res_q = grid.zeros();
        let mut res_p = grid.zeros();
        for k in 0..res_q.len() {
            let r = phi[k];
            let pi = cp.pi(r);
            let dpi = cp.pi_prime(r);
            res_q[k] = (q[n][k] - q[n + 1][k]) / tau - alpha * lap_q[k]
                - f_q[n][k]
                - beta * lap_conv[k]
                - pi * p[n + 1][k] / (tc * tc);
            res_p[k] = (p[n][k] - p[n + 1][k]) / tau - pi * (q[n + 1][k] - q[n][k]) / tau - lap_p[k]
                + pot.gamma_prime(r)? * p[n][k]
                + (2.0 / tc * dpi - base.v[n][k] * dpi / (tc * tc)) * p[n + 1][k]
                - k1 * (r - cost.phi_q[n][k]);
        }
        rp += tau * grid.norm(&res_p, Metric::L2);
        rq += tau * grid.norm(&res_q, Metric::L2);
    }
    Ok((rp, rq))
}
