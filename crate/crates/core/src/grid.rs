//! Cell-centered rectangular grid with a zero-flux (Neumann) Laplacian.
//!
//! Fields live at cell centers and are stored row-major: the value of cell
//! `(i, j)` (column `i` along x, row `j` along y) sits at index `j * nx + i`.
//! All spatial integrals use the lumped midpoint rule, so the discrete L2
//! inner product is `h^2 * sum(a_k * b_k)`. The stiffness form is a sum over
//! interior faces of the products of jumps; with square cells the `h`
//! factors cancel. Under these choices the Laplacian is exactly the negative
//! of the stiffness form, which is what makes the conservation and
//! transpose identities of the solver hold to rounding.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Deref, DerefMut};

use crate::error::{Error, Result};

/// Relative tolerance on `lx / nx == ly / ny`.
const ISOTROPY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub lx: f64,
    pub ly: f64,
    pub nx: usize,
    pub ny: usize,
    h: f64,
}

/// Real values at the cell centers of a [`GridSpec`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Field(Vec<f64>);

/// Inner product selector: `L2` is the lumped mass product, `V` adds the
/// stiffness form (discrete H1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    L2,
    V,
}

pub fn build_grid(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<GridSpec> {
    GridSpec::new(lx, ly, nx, ny)
}

impl GridSpec {
    pub fn new(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<Self> {
        if nx < 3 || ny < 3 || !(lx > 0.0) || !(ly > 0.0) || !lx.is_finite() || !ly.is_finite() {
            return Err(Error::DegenerateGrid { nx, ny });
        }
        let hx = lx / nx as f64;
        let hy = ly / ny as f64;
        if (hx - hy).abs() > ISOTROPY_TOL * hx.max(hy) {
            return Err(Error::AnisotropicCells { hx, hy });
        }
        Ok(GridSpec { lx, ly, nx, ny, h: hx })
    }

    pub fn hx(&self) -> f64 {
        self.h
    }

    pub fn hy(&self) -> f64 {
        self.h
    }

    /// Common cell size.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn cell_volume(&self) -> f64 {
        self.h * self.h
    }

    pub fn area(&self) -> f64 {
        self.lx * self.ly
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn center(&self, i: usize, j: usize) -> (f64, f64) {
        ((i as f64 + 0.5) * self.h, (j as f64 + 0.5) * self.h)
    }

    /// Same domain, `factor` times more cells per axis.
    pub fn refined(&self, factor: usize) -> Result<GridSpec> {
        GridSpec::new(self.lx, self.ly, self.nx * factor, self.ny * factor)
    }

    pub fn zeros(&self) -> Field {
        Field::zeros(self.cells())
    }

    pub fn constant(&self, c: f64) -> Field {
        Field(vec![c; self.cells()])
    }

    /// Samples `f(x, y)` at every cell center.
    pub fn sample<F: Fn(f64, f64) -> f64>(&self, f: F) -> Field {
        let mut out = Vec::with_capacity(self.cells());
        for j in 0..self.ny {
            for i in 0..self.nx {
                let (x, y) = self.center(i, j);
                out.push(f(x, y));
            }
        }
        Field(out)
    }

    pub fn check(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.cells() {
            return Err(Error::ShapeMismatch {
                expected: self.cells(),
                found: f.len(),
            });
        }
        Ok(())
    }

    /// Writes the 5-point zero-flux Laplacian of `f` into `out`.
    ///
    /// Boundary cells simply drop the missing neighbour, which is the
    /// finite-volume closure of a zero normal flux.
    pub fn laplacian_into(&self, f: &[f64], out: &mut [f64]) {
        let (nx, ny) = (self.nx, self.ny);
        let inv = 1.0 / (self.h * self.h);
        for j in 0..ny {
            let row = j * nx;
            for i in 0..nx {
                let k = row + i;
                let c = f[k];
                let mut acc = 0.0;
                if i > 0 {
                    acc += f[k - 1] - c;
                }
                if i + 1 < nx {
                    acc += f[k + 1] - c;
                }
                if j > 0 {
                    acc += f[k - nx] - c;
                }
                if j + 1 < ny {
                    acc += f[k + nx] - c;
                }
                out[k] = acc * inv;
            }
        }
    }

    pub fn laplacian(&self, f: &[f64]) -> Field {
        let mut out = self.zeros();
        self.laplacian_into(f, &mut out);
        out
    }

    /// Diagonal of the negative Laplacian (number of interior faces / h^2).
    pub fn neg_laplacian_diagonal(&self) -> Field {
        let inv = 1.0 / (self.h * self.h);
        let mut d = self.zeros();
        for j in 0..self.ny {
            for i in 0..self.nx {
                let faces = (i > 0) as usize
                    + (i + 1 < self.nx) as usize
                    + (j > 0) as usize
                    + (j + 1 < self.ny) as usize;
                d[self.index(i, j)] = faces as f64 * inv;
            }
        }
        d
    }

    pub fn dot_l2(&self, a: &[f64], b: &[f64]) -> f64 {
        self.cell_volume() * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
    }

    /// Sum over interior faces of `(jump of a) * (jump of b)`.
    pub fn stiffness(&self, a: &[f64], b: &[f64]) -> f64 {
        let (nx, ny) = (self.nx, self.ny);
        let mut acc = 0.0;
        for j in 0..ny {
            let row = j * nx;
            for i in 0..nx {
                let k = row + i;
                if i + 1 < nx {
                    acc += (a[k + 1] - a[k]) * (b[k + 1] - b[k]);
                }
                if j + 1 < ny {
                    acc += (a[k + nx] - a[k]) * (b[k + nx] - b[k]);
                }
            }
        }
        acc
    }

    pub fn dot(&self, a: &[f64], b: &[f64], metric: Metric) -> f64 {
        match metric {
            Metric::L2 => self.dot_l2(a, b),
            Metric::V => self.dot_l2(a, b) + self.stiffness(a, b),
        }
    }

    pub fn norm(&self, a: &[f64], metric: Metric) -> f64 {
        libm::sqrt(self.dot(a, a, metric).max(0.0))
    }

    /// Lumped integral over the domain (compensated sum).
    pub fn integral(&self, a: &[f64]) -> f64 {
        self.cell_volume() * compensated_sum(a)
    }
}

/// Neumaier summation.
pub fn compensated_sum(a: &[f64]) -> f64 {
    let mut s = 0.0;
    let mut c = 0.0;
    for &x in a {
        let t = s + x;
        if libm::fabs(s) >= libm::fabs(x) {
            c += (s - t) + x;
        } else {
            c += (x - t) + s;
        }
        s = t;
    }
    s + c
}

/// Zero-flux Laplacian with shape checking.
pub fn laplacian_neumann(grid: &GridSpec, f: &Field) -> Result<Field> {
    grid.check(f)?;
    Ok(grid.laplacian(f))
}

/// L2 or V inner product with shape checking.
pub fn inner(grid: &GridSpec, a: &Field, b: &Field, metric: Metric) -> Result<f64> {
    grid.check(a)?;
    grid.check(b)?;
    Ok(grid.dot(a, b, metric))
}

impl Field {
    pub fn zeros(n: usize) -> Self {
        Field(vec![0.0; n])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Field(values)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &[f64]) {
        for (s, xi) in self.0.iter_mut().zip(x) {
            *s += a * xi;
        }
    }

    pub fn scale(&mut self, a: f64) {
        for s in &mut self.0 {
            *s *= a;
        }
    }

    pub fn scaled(&self, a: f64) -> Field {
        Field(self.0.iter().map(|x| a * x).collect())
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Field {
        Field(self.0.iter().map(|&x| f(x)).collect())
    }

    pub fn zip_map<F: Fn(f64, f64) -> f64>(&self, other: &[f64], f: F) -> Field {
        Field(self.0.iter().zip(other).map(|(&a, &b)| f(a, b)).collect())
    }

    pub fn sub(&self, other: &[f64]) -> Field {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add(&self, other: &[f64]) -> Field {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

impl Deref for Field {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Field {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for Field {
    fn from(v: Vec<f64>) -> Self {
        Field(v)
    }
}

/// Result of a conjugate gradient solve.
#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub solution: Field,
    pub iterations: usize,
    /// Final L2 residual norm.
    pub residual: f64,
    /// L2 residual norm after every iteration, starting with the initial one.
    pub history: Vec<f64>,
}

/// Conjugate gradients for an operator that is symmetric positive definite
/// in the L2 inner product, started from zero.
///
/// Stops once `||apply(x) - rhs|| <= tol * ||rhs||` (L2 norms).
pub fn cg_solve<A>(grid: &GridSpec, apply: A, rhs: &[f64], tol: f64, maxit: usize) -> Result<CgOutcome>
where
    A: FnMut(&[f64], &mut [f64]),
{
    pcg_solve(grid, apply, None, rhs, tol, maxit)
}

/// Conjugate gradients with an optional diagonal (Jacobi) preconditioner.
pub fn pcg_solve<A>(
    grid: &GridSpec,
    mut apply: A,
    diag: Option<&[f64]>,
    rhs: &[f64],
    tol: f64,
    maxit: usize,
) -> Result<CgOutcome>
where
    A: FnMut(&[f64], &mut [f64]),
{
    grid.check(rhs)?;
    if let Some(d) = diag {
        grid.check(d)?;
    }
    let n = rhs.len();
    let mut x = Field::zeros(n);
    let mut r = Field::from_vec(rhs.to_vec());
    let rhs_norm = grid.norm(rhs, Metric::L2);
    let mut history = vec![rhs_norm];
    if !rhs_norm.is_finite() {
        return Err(Error::NonFinite("cg right-hand side"));
    }
    if rhs_norm == 0.0 {
        return Ok(CgOutcome {
            solution: x,
            iterations: 0,
            residual: 0.0,
            history,
        });
    }
    let target = tol * rhs_norm;
    let precondition = |r: &[f64], z: &mut [f64]| match diag {
        Some(d) => {
            for k in 0..r.len() {
                z[k] = r[k] / d[k];
            }
        }
        None => z.copy_from_slice(r),
    };
    let mut z = Field::zeros(n);
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut ap = Field::zeros(n);
    let mut rz = grid.dot_l2(&r, &z);
    let mut res = rhs_norm;
    for it in 1..=maxit {
        apply(&p, &mut ap);
        let pap = grid.dot_l2(&p, &ap);
        if !(pap > 0.0) || !pap.is_finite() {
            return Err(Error::NoConvergence {
                iterations: it - 1,
                residual: res,
            });
        }
        let alpha = rz / pap;
        x.axpy(alpha, &p);
        r.axpy(-alpha, &ap);
        res = grid.norm(&r, Metric::L2);
        history.push(res);
        if res <= target {
            return Ok(CgOutcome {
                solution: x,
                iterations: it,
                residual: res,
                history,
            });
        }
        precondition(&r, &mut z);
        let rz_new = grid.dot_l2(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    Err(Error::NoConvergence {
        iterations: maxit,
        residual: res,
    })
}

/// Default iteration cap for the internal solves.
pub const DEFAULT_CG_MAXIT: usize = 5000;

/// V-Riesz representative: solves `z - Laplacian(z) = f`, so that
/// `<z, h>_V = <f, h>_L2` for every grid function `h`.
pub fn riesz_v(grid: &GridSpec, f: &[f64], tol: f64) -> Result<Field> {
    let g = *grid;
    let out = cg_solve(
        grid,
        |x, y| {
            g.laplacian_into(x, y);
            for k in 0..x.len() {
                y[k] = x[k] - y[k];
            }
        },
        f,
        tol,
        DEFAULT_CG_MAXIT,
    )?;
    Ok(out.solution)
}
