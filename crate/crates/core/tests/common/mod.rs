#![allow(dead_code)]

use caginalp_core::control::{ControlPair, CostSpec};
use caginalp_core::nonlinearity::{CouplingSpec, PotentialSpec};
use caginalp_core::presets::CosineProduct;
use caginalp_core::sensitivity::Perturbation;
use caginalp_core::state::{PhysParams, Problem, SolverOptions, TimeGrid};
use caginalp_core::{Field, GridSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn problem(n: usize, nt: usize, potential: PotentialSpec, coupling: CouplingSpec, amp: f64) -> Problem {
    let grid = GridSpec::new(1.0, 1.0, n, n).unwrap();
    let phi0 = CosineProduct::new(0.0, amp, 1.0, 1.0).sample(&grid);
    let w0 = CosineProduct::new(0.1, 0.05, 2.0, 0.0).sample(&grid);
    let opts = SolverOptions { cg_tol: 1e-14, newton_tol: 1e-13, ..SolverOptions::default() };
    Problem::new(
        grid,
        TimeGrid::new(0.25, nt).unwrap(),
        PhysParams::default(),
        potential,
        coupling,
        phi0,
        w0,
        opts,
    )
    .unwrap()
}

pub fn regular(n: usize, nt: usize) -> Problem {
    problem(n, nt, PotentialSpec::regular(), CouplingSpec::default_affine(), 0.5)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Smooth random field: a few random cosine modes.
pub fn smooth_field(grid: &GridSpec, rng: &mut ChaCha8Rng, scale: f64) -> Field {
    let mut out = grid.zeros();
    for kx in 0..3 {
        for ky in 0..3 {
            let a: f64 = rng.gen_range(-1.0..1.0) * scale;
            out.axpy(1.0, &CosineProduct::new(0.0, a, kx as f64, ky as f64).sample(grid));
        }
    }
    out
}

pub fn rough_field(grid: &GridSpec, rng: &mut ChaCha8Rng, scale: f64) -> Field {
    (0..grid.cells()).map(|_| rng.gen_range(-1.0..1.0) * scale).collect::<Vec<_>>().into()
}

pub fn random_control(p: &Problem, rng: &mut ChaCha8Rng, scale: f64) -> ControlPair {
    ControlPair {
        u: (0..p.time.nt).map(|_| smooth_field(&p.grid, rng, scale)).collect(),
        v0: smooth_field(&p.grid, rng, scale),
    }
}

pub fn random_perturbation(p: &Problem, rng: &mut ChaCha8Rng) -> Perturbation {
    Perturbation {
        h: (0..p.time.nt).map(|_| rough_field(&p.grid, rng, 1.0)).collect(),
        h0: smooth_field(&p.grid, rng, 1.0),
    }
}

pub fn with_perturbation(c: &ControlPair, pert: &Perturbation, eps: f64) -> ControlPair {
    let mut out = c.clone();
    for (u, h) in out.u.iter_mut().zip(&pert.h) {
        u.axpy(eps, h);
    }
    out.v0.axpy(eps, &pert.h0);
    out
}

/// All six tracking terms active with smooth nonzero targets.
pub fn full_cost(p: &Problem, nu1: f64, nu2: f64) -> CostSpec {
    let g = &p.grid;
    let nt = p.time.nt;
    let mut c = CostSpec::with_zero_targets(g, nt, [1.0, 0.5, 2.0, 1.5, 1.0, 0.7], nu1, nu2).unwrap();
    for n in 0..=nt {
        let t = p.time.time(n);
        c.phi_q[n] = CosineProduct::new(0.2 * t, 0.3, 1.0, 0.0).sample(g);
        c.w_q[n] = CosineProduct::new(t, 0.1, 0.0, 1.0).sample(g);
        c.wprime_q[n] = CosineProduct::new(1.0, 0.2, 1.0, 1.0).sample(g);
    }
    c.phi_omega = CosineProduct::new(0.0, -0.4, 1.0, 1.0).sample(g);
    c.w_omega = CosineProduct::constant(0.3).sample(g);
    c.wprime_omega = CosineProduct::new(0.5, 0.1, 2.0, 1.0).sample(g);
    c
}
