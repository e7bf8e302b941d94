//! Analytic fields for initial data, targets and controls.

use core::f64::consts::PI;

use crate::grid::{Field, GridSpec};

/// `offset + amplitude * cos(kx pi x / lx) * cos(ky pi y / ly)`.
///
/// Every mode of this family satisfies the zero-flux boundary condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineProduct {
    pub offset: f64,
    pub amplitude: f64,
    pub kx: f64,
    pub ky: f64,
}

impl CosineProduct {
    pub const fn constant(value: f64) -> Self {
        CosineProduct { offset: value, amplitude: 0.0, kx: 0.0, ky: 0.0 }
    }

    pub const fn new(offset: f64, amplitude: f64, kx: f64, ky: f64) -> Self {
        CosineProduct { offset, amplitude, kx, ky }
    }

    pub fn value(&self, grid: &GridSpec, x: f64, y: f64) -> f64 {
        self.offset
            + self.amplitude
                * libm::cos(self.kx * PI * x / grid.lx)
                * libm::cos(self.ky * PI * y / grid.ly)
    }

    pub fn sample(&self, grid: &GridSpec) -> Field {
        grid.sample(|x, y| self.value(grid, x, y))
    }
}
