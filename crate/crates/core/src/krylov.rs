//! Arnoldi evaluation of `y(t_n + t) = y^n + t phi(-t Â)(ĝ - Â y^n)` with
//! residual monitoring, for `phi(z) = (e^z - 1) / z`.
//!
//! With `Â V_m = V_m H_m + h_{m+1,m} v_{m+1} e_m^T` the Krylov approximation
//! `y_m(t) = y^n + V_m (beta t phi(-t H_m) e_1)` has an ODE residual of norm
//! `beta h_{m+1,m} t |e_m^T phi(-t H_m) e_1|`, which is cheap to evaluate for
//! any `t` and nondecreasing in `t` when the field of values of `Â` lies in
//! the closed right half plane. The adaptive scheme uses this to pick the
//! largest step the current subspace resolves; constant-step integration
//! chains such sub-steps with restarts.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::operator::LinearOperator;
use crate::problem::LinearizedSystem;

/// `phi(M)` for a small dense matrix, read off the top-right block of
/// `exp([[M, I], [0, 0]])`.
pub fn phi_dense(m: &DMatrix<f64>) -> DMatrix<f64> {
    let k = m.nrows();
    assert_eq!(k, m.ncols(), "phi_dense needs a square matrix");
    if k == 0 {
        return DMatrix::zeros(0, 0);
    }
    let mut aug = DMatrix::zeros(2 * k, 2 * k);
    aug.view_mut((0, 0), (k, k)).copy_from(m);
    aug.view_mut((0, k), (k, k)).fill_with_identity();
    aug.exp().view((0, k), (k, k)).into_owned()
}

/// `phi(M) b` from the last column of `exp([[M, b], [0, 0]])`.
pub fn phi_apply_dense(m: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let k = m.nrows();
    assert_eq!(k, m.ncols());
    assert_eq!(k, b.len());
    if k == 0 {
        return DVector::zeros(0);
    }
    let mut aug = DMatrix::zeros(k + 1, k + 1);
    aug.view_mut((0, 0), (k, k)).copy_from(m);
    aug.view_mut((0, k), (k, 1)).copy_from(b);
    aug.exp().view((0, k), (k, 1)).into_owned().column(0).into_owned()
}

/// `y^n + t phi(-t Â) r0` with every matrix function evaluated densely.
pub fn phi_step_dense(a_hat: &DMatrix<f64>, y_n: &DVector<f64>, r0: &DVector<f64>, t: f64) -> DVector<f64> {
    y_n + phi_apply_dense(&(a_hat * -t), &(r0 * t))
}

/// How the largest admissible step is located once `m_max` is reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceMode {
    /// 40 bisection steps on `[0, tau0]`; relies on the residual being monotone.
    #[default]
    Bisection,
    /// Uniform 1000-point scan; the largest sample under tolerance wins.
    Scan,
}

const BISECTION_STEPS: usize = 40;
const SCAN_POINTS: usize = 1000;
const BREAKDOWN_RTOL: f64 = 1e-14;

/// Arnoldi basis `V_{m+1}`, Hessenberg `H_{m+1,m}` and starting norm `beta`.
#[derive(Debug, Clone)]
pub struct KrylovDecomposition {
    basis: Vec<DVector<f64>>,
    h: DMatrix<f64>,
    beta: f64,
    m: usize,
    breakdown: bool,
    h_scale: f64,
}

impl KrylovDecomposition {
    /// Empty decomposition for `start`, with room for `m_max` Arnoldi steps.
    pub fn new(start: &DVector<f64>, m_max: usize) -> Self {
        let beta = start.norm();
        let basis = if beta > 0.0 {
            vec![start / beta]
        } else {
            Vec::new()
        };
        Self {
            basis,
            h: DMatrix::zeros(m_max + 1, m_max),
            beta,
            m: 0,
            breakdown: beta == 0.0,
            h_scale: 0.0,
        }
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn m_max(&self) -> usize {
        self.h.ncols()
    }

    /// True once the subspace became invariant (or the start vector was zero).
    pub fn is_breakdown(&self) -> bool {
        self.breakdown
    }

    /// Basis vectors `v_1..v_{m+1}`; only `m` of them after a breakdown.
    pub fn basis(&self) -> &[DVector<f64>] {
        &self.basis
    }

    /// Leading `m x m` block of `H`.
    pub fn h_square(&self) -> DMatrix<f64> {
        self.h.view((0, 0), (self.m, self.m)).into_owned()
    }

    /// `(m+1) x m` Hessenberg matrix.
    pub fn h_rect(&self) -> DMatrix<f64> {
        self.h.view((0, 0), (self.m + 1, self.m)).into_owned()
    }

    /// `h_{m+1,m}`, zero before the first step and after a breakdown.
    pub fn h_next(&self) -> f64 {
        if self.m == 0 {
            0.0
        } else {
            self.h[(self.m, self.m - 1)]
        }
    }

    /// One Arnoldi step with modified Gram-Schmidt; exactly one application of `op`.
    /// Returns `true` on (happy) breakdown.
    pub fn extend<O: LinearOperator + ?Sized>(&mut self, op: &O) -> Result<bool> {
        if self.breakdown {
            return Err(Error::InvalidParameter(
                "Arnoldi process already reached an invariant subspace".into(),
            ));
        }
        if self.m >= self.m_max() {
            return Err(Error::InvalidParameter(format!(
                "Krylov dimension limit {} reached",
                self.m_max()
            )));
        }
        check_dim(op.dim(), self.basis[0].len())?;
        let j = self.m;
        let mut w = op.apply(&self.basis[j]);
        let before = w.norm();
        for i in 0..=j {
            let hij = w.dot(&self.basis[i]);
            self.h[(i, j)] = hij;
            w.axpy(-hij, &self.basis[i], 1.0);
        }
        if w.norm() < 0.5 * before {
            for i in 0..=j {
                let c = w.dot(&self.basis[i]);
                self.h[(i, j)] += c;
                w.axpy(-c, &self.basis[i], 1.0);
            }
        }
        let norm = w.norm();
        self.h_scale = (0..=j).fold(self.h_scale.max(norm), |s, i| s.max(self.h[(i, j)].abs()));
        self.m += 1;
        if norm <= BREAKDOWN_RTOL * self.h_scale {
            self.h[(j + 1, j)] = 0.0;
            self.breakdown = true;
        } else {
            self.h[(j + 1, j)] = norm;
            self.basis.push(w / norm);
        }
        Ok(self.breakdown)
    }

    /// `u = t phi(-t H_m) e_1`.
    pub fn phi_coefficients(&self, t: f64) -> DVector<f64> {
        let mut e1 = DVector::zeros(self.m);
        if self.m > 0 {
            e1[0] = t;
        }
        phi_apply_dense(&(self.h_square() * -t), &e1)
    }

    /// Relative residual norm `h_{m+1,m} t |e_m^T phi(-t H_m) e_1|`.
    pub fn resnorm(&self, t: f64) -> f64 {
        let h = self.h_next();
        if t == 0.0 || h == 0.0 {
            return 0.0;
        }
        h * self.phi_coefficients(t)[self.m - 1].abs()
    }

    /// `V_m c` for a coefficient vector of length `m`.
    pub fn combine(&self, coeffs: &DVector<f64>) -> DVector<f64> {
        assert_eq!(coeffs.len(), self.m);
        let n = self.basis.first().map_or(0, |v| v.len());
        let mut out = DVector::zeros(n);
        for (c, v) in coeffs.iter().zip(&self.basis) {
            out.axpy(*c, v, 1.0);
        }
        out
    }

    /// `V_{m+1}` as a dense matrix (for checks on small problems).
    pub fn v_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_columns(&self.basis)
    }

    /// Largest `s` in `[0, tau0]` with `resnorm(s) <= tol`.
    pub fn admissible_step(&self, tau0: f64, tol: f64, mode: TraceMode) -> f64 {
        if self.resnorm(tau0) <= tol {
            return tau0;
        }
        match mode {
            TraceMode::Bisection => {
                let (mut lo, mut hi) = (0.0, tau0);
                for _ in 0..BISECTION_STEPS {
                    let mid = 0.5 * (lo + hi);
                    if self.resnorm(mid) <= tol {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                lo
            }
            TraceMode::Scan => (1..SCAN_POINTS)
                .rev()
                .map(|k| tau0 * k as f64 / SCAN_POINTS as f64)
                .find(|&s| self.resnorm(s) <= tol)
                .unwrap_or(0.0),
        }
    }
}

/// Outcome of one residual-time Krylov sweep.
#[derive(Debug, Clone)]
pub struct PhiStepResult {
    /// Accepted step, `tau0` unless the residual forced a shorter one.
    pub tau: f64,
    pub y_next: DVector<f64>,
    /// Relative residual at `tau`.
    pub resnorm: f64,
    pub m_used: usize,
    /// Tolerance met at `tau0` before `m_max` (or breakdown / zero start).
    pub converged_early: bool,
    /// Applications of `Â` performed by this call.
    pub matvecs: usize,
    pub krylov: KrylovDecomposition,
}

/// Parameters of a Krylov sweep.
#[derive(Debug, Clone, Copy)]
pub struct KrylovOptions {
    pub tol_phi: f64,
    pub m_max: usize,
    pub trace: TraceMode,
}

impl KrylovOptions {
    pub fn new(tol_phi: f64, m_max: usize) -> Self {
        Self {
            tol_phi,
            m_max,
            trace: TraceMode::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.m_max == 0 {
            return Err(Error::InvalidParameter("m_max must be at least 1".into()));
        }
        if !(self.tol_phi > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tol_phi must be positive, got {}",
                self.tol_phi
            )));
        }
        Ok(())
    }
}

/// Residual-time Krylov sweep for `y' = -op y + g`, `y(0) = y_n`, given the
/// starting residual `r0 = g - op y_n`.
pub fn ee2_krylov_step_with<O: LinearOperator + ?Sized>(
    op: &O,
    y_n: &DVector<f64>,
    r0: &DVector<f64>,
    tau0: f64,
    opts: KrylovOptions,
) -> Result<PhiStepResult> {
    check_dim(op.dim(), y_n.len())?;
    check_dim(op.dim(), r0.len())?;
    opts.validate()?;
    if !(tau0 > 0.0 && tau0.is_finite()) {
        return Err(Error::InvalidParameter(format!("tau0 must be positive, got {tau0}")));
    }
    let mut krylov = KrylovDecomposition::new(r0, opts.m_max);
    if krylov.beta() == 0.0 {
        return Ok(PhiStepResult {
            tau: tau0,
            y_next: y_n.clone(),
            resnorm: 0.0,
            m_used: 0,
            converged_early: true,
            matvecs: 0,
            krylov,
        });
    }
    let mut tau = tau0;
    let mut converged_early = false;
    loop {
        let breakdown = krylov.extend(op)?;
        let res = krylov.resnorm(tau0);
        if breakdown || res <= opts.tol_phi {
            converged_early = true;
            break;
        }
        if krylov.m() == opts.m_max {
            tau = krylov.admissible_step(tau0, opts.tol_phi, opts.trace);
            if tau == 0.0 {
                return Err(Error::KrylovStall {
                    resnorm: res,
                    tol: opts.tol_phi,
                    m_max: opts.m_max,
                });
            }
            break;
        }
    }
    let u = krylov.phi_coefficients(tau);
    let y_next = y_n + krylov.combine(&u) * krylov.beta();
    let resnorm = if krylov.m() == 0 {
        0.0
    } else {
        krylov.h_next() * u[krylov.m() - 1].abs()
    };
    Ok(PhiStepResult {
        tau,
        y_next,
        resnorm,
        m_used: krylov.m(),
        converged_early,
        matvecs: krylov.m(),
        krylov,
    })
}

/// Residual-time Krylov step for a linearized Cahn-Hilliard system. The
/// starting residual `ĝ - Â y^n` costs one extra matvec.
pub fn ee2_krylov_step(
    sys: &LinearizedSystem<'_>,
    y_n: &DVector<f64>,
    tau0: f64,
    tol_phi: f64,
    m_max: usize,
) -> Result<PhiStepResult> {
    check_dim(sys.dim(), y_n.len())?;
    let r0 = sys.g_hat() - sys.apply(y_n);
    let mut out = ee2_krylov_step_with(sys, y_n, &r0, tau0, KrylovOptions::new(tol_phi, m_max))?;
    out.matvecs += 1;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ConstantStepResult {
    pub y_next: DVector<f64>,
    /// Number of Arnoldi restarts, at least one unless the start was stationary.
    pub sweeps: usize,
    /// Applications of `Â`, including restart residuals.
    pub matvecs: usize,
    /// Largest Krylov dimension used by any sweep.
    pub m_used: usize,
}

const MAX_SWEEPS: usize = 100_000;

/// Advance `y' = -op y + g` over the whole interval `[0, tau]` by chaining
/// residual-time sweeps. Each restart begins from the current state with
/// starting vector `g - op y(t')`. Residuals are measured relative to the
/// norm of the first starting vector.
///
/// `r0`, when given, is the initial residual `g - op y_n` and saves a matvec.
pub fn ee2_constant_step_with<O: LinearOperator + ?Sized>(
    op: &O,
    g: &DVector<f64>,
    y_n: &DVector<f64>,
    r0: Option<&DVector<f64>>,
    tau: f64,
    opts: KrylovOptions,
) -> Result<ConstantStepResult> {
    check_dim(op.dim(), g.len())?;
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidParameter(format!("tau must be positive, got {tau}")));
    }
    let mut y = y_n.clone();
    let mut remaining = tau;
    let mut matvecs = 0;
    let mut sweeps = 0;
    let mut m_used = 0;
    let mut beta0 = None;
    let mut pending_r0 = r0.cloned();
    while remaining > 0.0 {
        let r = match pending_r0.take() {
            Some(r) => r,
            None => {
                matvecs += 1;
                g - op.apply(&y)
            }
        };
        let beta = r.norm();
        let beta0 = *beta0.get_or_insert(beta);
        if beta == 0.0 {
            break;
        }
        if sweeps == MAX_SWEEPS {
            return Err(Error::KrylovStall {
                resnorm: f64::NAN,
                tol: opts.tol_phi,
                m_max: opts.m_max,
            });
        }
        let sweep_opts = KrylovOptions {
            tol_phi: opts.tol_phi * beta0 / beta,
            ..opts
        };
        let step = ee2_krylov_step_with(op, &y, &r, remaining, sweep_opts)?;
        sweeps += 1;
        matvecs += step.matvecs;
        m_used = m_used.max(step.m_used);
        y = step.y_next;
        if step.tau >= remaining {
            break;
        }
        remaining -= step.tau;
    }
    Ok(ConstantStepResult {
        y_next: y,
        sweeps,
        matvecs,
        m_used,
    })
}

/// Constant-step EE2 advance of a linearized Cahn-Hilliard system.
pub fn ee2_constant_step(
    sys: &LinearizedSystem<'_>,
    y_n: &DVector<f64>,
    tau: f64,
    tol_phi: f64,
    m_max: usize,
) -> Result<DVector<f64>> {
    ee2_constant_step_with(sys, sys.g_hat(), y_n, None, tau, KrylovOptions::new(tol_phi, m_max))
        .map(|r| r.y_next)
}
