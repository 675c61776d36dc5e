//! Uniform cell-centered grids and the finite-difference Neumann Laplacian.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::operator::LinearOperator;
use crate::sparse::CsrMatrix;

/// A uniform `nx x ny` cell-centered grid on `(0, lx) x (0, ly)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

impl GridSpec {
    /// Validates the grid. A strip with one cell in one direction is allowed
    /// as long as the grid holds at least two cells.
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        if nx == 0 || ny == 0 || nx * ny < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least two cells, got {nx} x {ny}"
            )));
        }
        if !(lx > 0.0 && lx.is_finite() && ly > 0.0 && ly.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "domain lengths must be positive and finite, got {lx} x {ly}"
            )));
        }
        Ok(Self { nx, ny, lx, ly })
    }

    /// Square domain with unit spacing, `n x n` cells.
    pub fn unit_spacing(nx: usize, ny: usize) -> Result<Self> {
        Self::new(nx, ny, nx as f64, ny as f64)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    /// Row-major index of cell `(i, j)`, zero based, `i` along x.
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    /// Cell-center coordinates of cell `(i, j)`, zero based.
    pub fn node(&self, i: usize, j: usize) -> (f64, f64) {
        (
            self.lx * (i as f64 + 0.5) / self.nx as f64,
            self.ly * (j as f64 + 0.5) / self.ny as f64,
        )
    }
}

/// The symmetric positive semidefinite matrix `A` with `-A` the 5-point
/// Laplacian under homogeneous Neumann conditions.
///
/// Every call to [`LaplacianOperator::apply`] (or the [`LinearOperator`]
/// impl) bumps an atomic application counter.
#[derive(Debug)]
pub struct LaplacianOperator {
    spec: GridSpec,
    matrix: CsrMatrix,
    applications: AtomicU64,
}

impl Clone for LaplacianOperator {
    fn clone(&self) -> Self {
        Self {
            spec: self.spec,
            matrix: self.matrix.clone(),
            applications: AtomicU64::new(self.applications()),
        }
    }
}

/// Assemble the Neumann Laplacian on `spec`. Ghost cells mirror the boundary
/// value, so a missing neighbor contributes nothing and rows sum to zero.
pub fn build_laplacian(spec: GridSpec) -> Result<LaplacianOperator> {
    let spec = GridSpec::new(spec.nx, spec.ny, spec.lx, spec.ly)?;
    let cx = 1.0 / (spec.hx() * spec.hx());
    let cy = 1.0 / (spec.hy() * spec.hy());
    let mut triplets = Vec::with_capacity(5 * spec.len());
    for j in 0..spec.ny {
        for i in 0..spec.nx {
            let row = spec.index(i, j);
            let mut diag = 0.0;
            let mut couple = |col: usize, c: f64, diag: &mut f64| {
                triplets.push((row, col, -c));
                *diag += c;
            };
            if i > 0 {
                couple(spec.index(i - 1, j), cx, &mut diag);
            }
            if i + 1 < spec.nx {
                couple(spec.index(i + 1, j), cx, &mut diag);
            }
            if j > 0 {
                couple(spec.index(i, j - 1), cy, &mut diag);
            }
            if j + 1 < spec.ny {
                couple(spec.index(i, j + 1), cy, &mut diag);
            }
            triplets.push((row, row, diag));
        }
    }
    let matrix = CsrMatrix::from_triplets(spec.len(), spec.len(), &triplets);
    Ok(LaplacianOperator {
        spec,
        matrix,
        applications: AtomicU64::new(0),
    })
}

impl LaplacianOperator {
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CsrMatrix {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.spec.len()
    }

    pub fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), v.len())?;
        Ok(LinearOperator::apply(self, v))
    }

    pub fn one_norm(&self) -> f64 {
        self.matrix.one_norm()
    }

    /// Number of applications since construction (or the last reset).
    pub fn applications(&self) -> u64 {
        self.applications.load(Ordering::Relaxed)
    }

    pub fn reset_applications(&self) {
        self.applications.store(0, Ordering::Relaxed);
    }
}

impl LinearOperator for LaplacianOperator {
    fn dim(&self) -> usize {
        self.spec.len()
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        self.applications.fetch_add(1, Ordering::Relaxed);
        self.matrix.mul_vec_into(x, out);
    }
}
