//! Local iteration modified (LIM) time step.
//!
//! One step of the linearized implicit Euler scheme for `y' = -Â y + ĝ` is
//! replaced by `2p - 1` explicit relaxation sweeps
//!
//! ```text
//! y_next = (y^n + tau a_m y_prev + tau (ĝ - Â y_prev)) / (1 + tau a_m)
//! ```
//!
//! first for `m = 1..p`, then again for `m = 2..p`, with the parameters
//! `a_m` placed at shifted Chebyshev roots on `[0, lambda_max]`. The order
//! `p` grows like `sqrt(tau lambda_max)`, and `p = 1` is plain explicit Euler.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use nalgebra::DVector;

use crate::error::{check_dim, Error, Result};
use crate::operator::LinearOperator;
use crate::problem::{LinearizedSystem, NormMode};

/// Chebyshev polynomial order `ceil((pi/4) / (pi/2 - atan(sqrt(tau lambda_max))))`.
pub fn chebyshev_order(tau: f64, lambda_max: f64) -> usize {
    let x = (tau * lambda_max).max(0.0).sqrt();
    // pi/2 - atan(x) == atan(1/x) for x > 0, without the cancellation
    let gap = if x == 0.0 { FRAC_PI_2 } else { (1.0 / x).atan() };
    let p = (FRAC_PI_4 / gap).ceil();
    if p.is_finite() {
        (p as usize).max(1)
    } else {
        usize::MAX
    }
}

/// Largest Chebyshev order a schedule is built for.
pub const MAX_ORDER: usize = 1 << 24;

#[derive(Debug, Clone, PartialEq)]
pub struct ChebyshevSchedule {
    pub p: usize,
    pub lambda_max: f64,
    /// `cos(pi (2i - 1) / (2p))`, `i = 1..p`, in decreasing order.
    pub betas: Vec<f64>,
    /// `lambda_max (z1 - beta_m) / (1 + z1)` with `z1 = betas[0]`; the first is zero.
    pub a_coeffs: Vec<f64>,
}

impl ChebyshevSchedule {
    pub fn new(tau: f64, lambda_max: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidParameter(format!("tau must be positive, got {tau}")));
        }
        if !(lambda_max >= 0.0 && lambda_max.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda_max must be finite and nonnegative, got {lambda_max}"
            )));
        }
        let p = chebyshev_order(tau, lambda_max);
        if p > MAX_ORDER {
            return Err(Error::InvalidParameter(format!(
                "tau lambda_max = {:e} needs a Chebyshev order above {MAX_ORDER}",
                tau * lambda_max
            )));
        }
        let betas: Vec<f64> = (1..=p)
            .map(|i| (PI * (2 * i - 1) as f64 / (2 * p) as f64).cos())
            .collect();
        let z1 = betas[0];
        let a_coeffs = betas
            .iter()
            .map(|&b| lambda_max / (1.0 + z1) * (z1 - b))
            .collect();
        Ok(Self {
            p,
            lambda_max,
            betas,
            a_coeffs,
        })
    }

    /// Parameter indices in execution order: `1..p` then `2..p` (zero based).
    pub fn sweep_order(&self) -> impl Iterator<Item = usize> {
        (0..self.p).chain(1..self.p)
    }

    pub fn iterations(&self) -> usize {
        2 * self.p - 1
    }
}

pub fn build_schedule(tau: f64, lambda_max: f64) -> Result<ChebyshevSchedule> {
    ChebyshevSchedule::new(tau, lambda_max)
}

#[derive(Debug, Clone)]
pub struct LimStep {
    pub y_next: DVector<f64>,
    pub p: usize,
    /// Applications of `Â`, always `2p - 1`.
    pub matvecs: usize,
}

/// LIM step for a linear IVP `y' = -op y + g` with a given spectral bound.
pub fn lim_step_with<O: LinearOperator + ?Sized>(
    op: &O,
    g: &DVector<f64>,
    y_n: &DVector<f64>,
    tau: f64,
    lambda_max: f64,
) -> Result<LimStep> {
    check_dim(op.dim(), y_n.len())?;
    check_dim(op.dim(), g.len())?;
    let schedule = ChebyshevSchedule::new(tau, lambda_max)?;
    let total = schedule.iterations();
    let mut prev = y_n.clone();
    let mut next = DVector::zeros(y_n.len());
    let mut a_prev = DVector::zeros(y_n.len());
    for (iteration, m) in schedule.sweep_order().enumerate() {
        let ta = tau * schedule.a_coeffs[m];
        let denom = 1.0 + ta;
        op.apply_into(prev.as_slice(), a_prev.as_mut_slice());
        for i in 0..next.len() {
            next[i] = (y_n[i] + ta * prev[i] + tau * (g[i] - a_prev[i])) / denom;
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp {
                order: schedule.p,
                iteration: iteration + 1,
                total,
            });
        }
        std::mem::swap(&mut prev, &mut next);
    }
    Ok(LimStep {
        y_next: prev,
        p: schedule.p,
        matvecs: total,
    })
}

/// LIM step for a linearized Cahn-Hilliard system; `lambda_max` comes from `mode`.
pub fn lim_step(
    sys: &LinearizedSystem<'_>,
    y_n: &DVector<f64>,
    tau: f64,
    mode: NormMode,
) -> Result<LimStep> {
    lim_step_with(sys, sys.g_hat(), y_n, tau, sys.lambda_max(mode))
}
