//! Numerical core for a Caginalp-type phase field system with thermal memory.
//!
//! The state is an order parameter `phi` coupled to a thermal displacement `w`
//! whose time derivative `v = dw/dt` is the temperature. The heat flux follows
//! a Green-Naghdi type III law with coefficients `alpha` (Fourier-like part)
//! and `beta` (memory part). On top of the forward solver the crate provides
//! the tangent and adjoint sensitivities of the discrete scheme, a
//! discretization of the continuous adjoint system, and a projected gradient
//! optimizer for a distributed heat source `u` and an initial temperature `v0`.
//!
//! The crate is `no_std` and only needs `alloc`; file formats, configuration
//! and the command line live in the companion `caginalp` crate.
//!
//! Module map:
//!
//! - [`grid`]: cell-centered grid, Neumann Laplacian, inner products, CG, Riesz map.
//! - [`nonlinearity`]: convex potentials and the Lipschitz coupling.
//! - [`state`]: semi-implicit forward solver and run diagnostics.
//! - [`sensitivity`]: tangent, discrete adjoint, continuous adjoint.
//! - [`control`]: cost, reduced gradient, projection, certificates, optimizer.
//! - [`presets`]: analytic fields used by reference problems and tests.
#![no_std]
#![forbid(unsafe_code)]
// `!(x > 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod control;
pub mod error;
pub mod grid;
pub mod nonlinearity;
pub mod presets;
pub mod sensitivity;
pub mod state;

pub use error::{Error, Result};
pub use grid::{Field, GridSpec, Metric};
