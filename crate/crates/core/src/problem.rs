//! The space-discretized Cahn-Hilliard system `y' = -A (F'(y) + eps^2 A y)`
//! and its per-step linearization `y' = -Â y + ĝ`.
//!
//! The linearization freezes the Jacobian of `F'` at `y^n`:
//!
//! ```text
//! Â = A (J + s I + eps^2 A),     ĝ = A (J y^n + s y^n - F'(y^n)),     J = diag(3 y^2 - 1)
//! ```
//!
//! with `s = 0` for the plain scheme and `s = 1` with Eyre convex splitting.
//! A variable mobility would replace the leading `A` by `A_M(y^n)`; that
//! variant is not implemented.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::grid::{build_laplacian, GridSpec};
use crate::operator::LinearOperator;
use crate::sparse::CsrMatrix;

/// Double-well free energy `F(c) = (1 - c^2)^2 / 4`.
pub fn free_energy(c: f64) -> f64 {
    let w = 1.0 - c * c;
    0.25 * w * w
}

/// `F'(c) = c (c^2 - 1)`.
pub fn free_energy_prime(c: f64) -> f64 {
    c * (c * c - 1.0)
}

/// Interface width parameter spreading the transition over `m` cells of size `h`:
/// `eps_m = h m / (2 sqrt(2) artanh(9/10))`.
pub fn epsilon_m(h: f64, m: u32) -> Result<f64> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidParameter(format!("grid step must be positive, got {h}")));
    }
    if m == 0 {
        return Err(Error::InvalidParameter("epsilon_m needs m >= 1".into()));
    }
    Ok(h * m as f64 / (2.0 * std::f64::consts::SQRT_2 * 0.9f64.atanh()))
}

/// Diagonal of `J = dF'/dy`, i.e. `3 y_i^2 - 1`.
pub fn jacobian_diag(y: &DVector<f64>) -> DVector<f64> {
    y.map(|v| 3.0 * v * v - 1.0)
}

/// How the Chebyshev spectral bound `lambda_max` for `Â` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// Exact 1-norm of the explicitly assembled sparse product.
    #[default]
    ExactProduct,
    /// Matrix-free bound `|A|_1 (|J + sI|_1 + eps^2 |A|_1)`.
    UpperBound,
}

#[derive(Debug)]
pub struct CahnHilliardProblem {
    a: CsrMatrix,
    a_norm: f64,
    grid: Option<GridSpec>,
    epsilon: f64,
    use_eyre: bool,
    a_applications: AtomicU64,
}

impl CahnHilliardProblem {
    /// Problem for an arbitrary symmetric positive semidefinite `a`.
    pub fn new(a: CsrMatrix, epsilon: f64, use_eyre: bool) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch {
                expected: a.nrows(),
                got: a.ncols(),
            });
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        Ok(Self {
            a_norm: a.one_norm(),
            a,
            grid: None,
            epsilon,
            use_eyre,
            a_applications: AtomicU64::new(0),
        })
    }

    pub fn from_grid(spec: GridSpec, epsilon: f64, use_eyre: bool) -> Result<Self> {
        let lap = build_laplacian(spec)?;
        let mut problem = Self::new(lap.into_matrix(), epsilon, use_eyre)?;
        problem.grid = Some(spec);
        Ok(problem)
    }

    /// Same operator and epsilon with the splitting switched.
    pub fn with_eyre(&self, use_eyre: bool) -> Self {
        Self {
            a: self.a.clone(),
            a_norm: self.a_norm,
            grid: self.grid,
            epsilon: self.epsilon,
            use_eyre,
            a_applications: AtomicU64::new(0),
        }
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn grid(&self) -> Option<&GridSpec> {
        self.grid.as_ref()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn use_eyre(&self) -> bool {
        self.use_eyre
    }

    /// The diagonal shift `s` added to `J` by the splitting.
    pub fn shift(&self) -> f64 {
        if self.use_eyre {
            1.0
        } else {
            0.0
        }
    }

    pub fn laplacian(&self) -> &CsrMatrix {
        &self.a
    }

    pub fn laplacian_norm(&self) -> f64 {
        self.a_norm
    }

    /// Number of applications of `A` made by [`CahnHilliardProblem::rhs`].
    pub fn a_applications(&self) -> u64 {
        self.a_applications.load(Ordering::Relaxed)
    }

    fn apply_a(&self, x: &DVector<f64>) -> DVector<f64> {
        self.a_applications.fetch_add(1, Ordering::Relaxed);
        self.a.mul_vec(x)
    }

    /// Chemical potential `F'(y) + eps^2 A y`.
    pub fn chemical_potential(&self, y: &DVector<f64>) -> DVector<f64> {
        let ay = self.apply_a(y);
        let eps2 = self.epsilon * self.epsilon;
        DVector::from_iterator(
            y.len(),
            y.iter().zip(ay.iter()).map(|(&v, &l)| free_energy_prime(v) + eps2 * l),
        )
    }

    /// Full nonlinear right-hand side `-A (F'(y) + eps^2 A y)`.
    pub fn rhs(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), y.len())?;
        let mu = self.chemical_potential(y);
        Ok(-self.apply_a(&mu))
    }

    pub fn linearize(&self, y_n: &DVector<f64>) -> Result<LinearizedSystem<'_>> {
        check_dim(self.dim(), y_n.len())?;
        let jac_diag = jacobian_diag(y_n);
        let s = self.shift();
        let shifted = jac_diag.map(|j| j + s);
        let inner = DVector::from_iterator(
            y_n.len(),
            y_n.iter()
                .zip(shifted.iter())
                .map(|(&y, &d)| d * y - free_energy_prime(y)),
        );
        let g_hat = self.a.mul_vec(&inner);
        Ok(LinearizedSystem {
            problem: self,
            y_ref: y_n.clone(),
            jac_diag,
            shifted,
            g_hat,
            matvecs: AtomicU64::new(0),
            explicit: OnceLock::new(),
        })
    }
}

/// The frozen linear IVP `y' = -Â y + ĝ` around `y^n`.
#[derive(Debug)]
pub struct LinearizedSystem<'a> {
    problem: &'a CahnHilliardProblem,
    y_ref: DVector<f64>,
    jac_diag: DVector<f64>,
    shifted: DVector<f64>,
    g_hat: DVector<f64>,
    matvecs: AtomicU64,
    explicit: OnceLock<CsrMatrix>,
}

impl<'a> LinearizedSystem<'a> {
    pub fn problem(&self) -> &'a CahnHilliardProblem {
        self.problem
    }

    pub fn y_ref(&self) -> &DVector<f64> {
        &self.y_ref
    }

    pub fn jac_diag(&self) -> &DVector<f64> {
        &self.jac_diag
    }

    pub fn g_hat(&self) -> &DVector<f64> {
        &self.g_hat
    }

    /// `Â v`; counts as one matvec.
    pub fn apply_a_hat(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), v.len())?;
        Ok(self.apply(v))
    }

    /// Number of `Â` applications so far.
    pub fn matvecs(&self) -> u64 {
        self.matvecs.load(Ordering::Relaxed)
    }

    /// `A (J + sI + eps^2 A)` assembled once and cached.
    pub fn explicit_matrix(&self) -> &CsrMatrix {
        self.explicit.get_or_init(|| {
            let a = &self.problem.a;
            let eps2 = self.problem.epsilon * self.problem.epsilon;
            let inner = CsrMatrix::from_diagonal(&self.shifted).add_scaled(1.0, a, eps2);
            a.mul(&inner)
        })
    }

    /// Exact `|Â|_1`.
    pub fn one_norm_a_hat(&self) -> f64 {
        self.explicit_matrix().one_norm()
    }

    /// `|A|_1 (max_i |J_ii + s| + eps^2 |A|_1)`, never below the exact norm.
    pub fn one_norm_bound(&self) -> f64 {
        let a_norm = self.problem.a_norm;
        let eps2 = self.problem.epsilon * self.problem.epsilon;
        a_norm * (self.shifted.amax() + eps2 * a_norm)
    }

    pub fn lambda_max(&self, mode: NormMode) -> f64 {
        match mode {
            NormMode::ExactProduct => self.one_norm_a_hat(),
            NormMode::UpperBound => self.one_norm_bound(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        self.explicit_matrix().to_dense()
    }
}

impl LinearOperator for LinearizedSystem<'_> {
    fn dim(&self) -> usize {
        self.y_ref.len()
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        self.matvecs.fetch_add(1, Ordering::Relaxed);
        let a = &self.problem.a;
        let eps2 = self.problem.epsilon * self.problem.epsilon;
        let mut inner = vec![0.0; x.len()];
        a.mul_vec_into(x, &mut inner);
        for ((w, &xi), &d) in inner.iter_mut().zip(x).zip(self.shifted.iter()) {
            *w = d * xi + eps2 * *w;
        }
        a.mul_vec_into(&inner, out);
    }
}
