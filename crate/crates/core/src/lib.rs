//! Explicit stabilized time integration of the two-dimensional Cahn-Hilliard
//! equation.
//!
//! Two integrators are provided, both using only products with the
//! linearized operator `Â`:
//!
//! * [`lim`]: the local iteration modified scheme, a first-order step built
//!   from `2p - 1` Chebyshev-parameterized explicit Euler sweeps;
//! * [`krylov`]: the second-order exponential Euler scheme (EE2), evaluated
//!   with an Arnoldi process and residual-time step selection.
//!
//! [`driver`] runs them with constant or adaptive steps, [`diag`] computes
//! energy, mass and error diagnostics, and [`cli`] wraps everything in an
//! experiment runner that writes CSV output.

pub mod cli;
pub mod diag;
pub mod driver;
pub mod error;
pub mod grid;
pub mod krylov;
pub mod lim;
pub mod operator;
pub mod problem;
pub mod sparse;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use grid::{build_laplacian, GridSpec, LaplacianOperator};
pub use operator::LinearOperator;
pub use problem::{CahnHilliardProblem, LinearizedSystem, NormMode};
