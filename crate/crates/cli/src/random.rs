//! Seeded random data for the verification studies.

use caginalp_core::presets::CosineProduct;
use caginalp_core::sensitivity::{Perturbation, StateCotangent};
use caginalp_core::state::Problem;
use caginalp_core::{Field, GridSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Generator for one study; `stream` separates studies sharing a seed.
pub fn generator(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Independent uniform values in `[-scale, scale)` per cell.
pub fn rough_field(grid: &GridSpec, rng: &mut ChaCha8Rng, scale: f64) -> Field {
    Field::from_vec((0..grid.cells()).map(|_| rng.gen_range(-1.0..1.0) * scale).collect())
}

/// Random combination of the cosine modes `kx, ky < 3`.
pub fn smooth_field(grid: &GridSpec, rng: &mut ChaCha8Rng, scale: f64) -> Field {
    let mut out = grid.zeros();
    for kx in 0..3 {
        for ky in 0..3 {
            let a = rng.gen_range(-1.0..1.0) * scale;
            out.axpy(1.0, &CosineProduct::new(0.0, a, kx as f64, ky as f64).sample(grid));
        }
    }
    out
}

/// Smooth field rescaled to maximum modulus `size`.
pub fn smooth_unit(grid: &GridSpec, rng: &mut ChaCha8Rng, size: f64) -> Field {
    let f = smooth_field(grid, rng, 1.0);
    let m = f.max_abs();
    if m > 0.0 {
        f.scaled(size / m)
    } else {
        f
    }
}

/// Rough source perturbation, smooth initial temperature perturbation.
pub fn perturbation(p: &Problem, rng: &mut ChaCha8Rng) -> Perturbation {
    Perturbation {
        h: (0..p.time.nt).map(|_| rough_field(&p.grid, rng, 1.0)).collect(),
        h0: smooth_field(&p.grid, rng, 1.0),
    }
}

pub fn cotangent(p: &Problem, rng: &mut ChaCha8Rng) -> StateCotangent {
    let nodes = p.time.nodes();
    StateCotangent {
        phi: (0..nodes).map(|_| rough_field(&p.grid, rng, 1.0)).collect(),
        w: (0..nodes).map(|_| rough_field(&p.grid, rng, 1.0)).collect(),
        v: (0..nodes).map(|_| rough_field(&p.grid, rng, 1.0)).collect(),
    }
}
