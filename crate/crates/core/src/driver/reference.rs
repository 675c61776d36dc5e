//! High-accuracy reference trajectories used as the error oracle.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{run_adaptive_ee2, Scheme, SolverConfig};
use crate::error::{check_dim, Error, Result};
use crate::problem::CahnHilliardProblem;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum ReferenceMethod {
    /// Dormand-Prince 5(4) with tight mixed tolerances.
    Classical { rtol: f64, atol: f64 },
    /// Adaptive EE2 without splitting, a fixed Krylov tolerance and a step cap.
    Ee2 {
        tol: f64,
        tol_phi: f64,
        m_max: usize,
        tau_max: f64,
    },
}

impl ReferenceMethod {
    pub fn classical() -> Self {
        ReferenceMethod::Classical {
            rtol: 1e-10,
            atol: 1e-12,
        }
    }

    pub fn ee2_tight() -> Self {
        ReferenceMethod::Ee2 {
            tol: 1e-10,
            tol_phi: 1e-12,
            m_max: 30,
            tau_max: 0.02,
        }
    }
}

impl Default for ReferenceMethod {
    fn default() -> Self {
        Self::classical()
    }
}

/// Solution of the nonlinear system at `t_final`.
pub fn reference_solve(
    problem: &CahnHilliardProblem,
    y0: &DVector<f64>,
    t_final: f64,
    method: ReferenceMethod,
) -> Result<DVector<f64>> {
    check_dim(problem.dim(), y0.len())?;
    match method {
        ReferenceMethod::Classical { rtol, atol } => {
            let opts = Dopri5Options {
                rtol,
                atol,
                ..Dopri5Options::default()
            };
            let mut failure = None;
            let out = dopri5(
                |y| match problem.rhs(y) {
                    Ok(f) => f,
                    Err(e) => {
                        failure.get_or_insert(e);
                        DVector::from_element(y.len(), f64::NAN)
                    }
                },
                y0,
                t_final,
                &opts,
            );
            if let Some(e) = failure {
                return Err(e);
            }
            out.map(|(y, _)| y)
        }
        ReferenceMethod::Ee2 {
            tol,
            tol_phi,
            m_max,
            tau_max,
        } => {
            let plain = problem.with_eyre(false);
            let mut config = SolverConfig::new(Scheme::Ee2, true, tau_max, t_final, tol).with_m_max(m_max);
            config.tol_phi = Some(tol_phi);
            config.tau_max = Some(tau_max);
            run_adaptive_ee2(&plain, &config, y0).map(|out| out.y_final)
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Dopri5Options {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step; estimated from the data when `None`.
    pub h0: Option<f64>,
    pub max_steps: usize,
}

impl Default for Dopri5Options {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            h0: None,
            max_steps: 50_000_000,
        }
    }
}

// Dormand-Prince tableau; the system is autonomous so the nodes are not needed
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// fifth-order weights minus embedded fourth-order weights
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Dormand-Prince 5(4) for the autonomous system `y' = f(y)` on `[0, t_final]`.
/// Returns the final state and the number of accepted steps.
pub fn dopri5<F>(mut f: F, y0: &DVector<f64>, t_final: f64, opts: &Dopri5Options) -> Result<(DVector<f64>, usize)>
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    if !(t_final > 0.0) {
        return Err(Error::InvalidParameter(format!("T must be positive, got {t_final}")));
    }
    let n = y0.len();
    let scaled_norm = |v: &DVector<f64>, y: &DVector<f64>, y2: &DVector<f64>| {
        let s: f64 = (0..n)
            .map(|i| {
                let sc = opts.atol + opts.rtol * y[i].abs().max(y2[i].abs());
                (v[i] / sc).powi(2)
            })
            .sum();
        (s / n.max(1) as f64).sqrt()
    };

    let mut y = y0.clone();
    let mut k1 = f(&y);
    let mut h = opts.h0.unwrap_or_else(|| {
        let d0 = scaled_norm(&y, &y, &y);
        let d1 = scaled_norm(&k1, &y, &y);
        let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h.min(t_final)
    });
    let mut t = 0.0;
    let mut accepted = 0;
    let mut k = vec![DVector::zeros(n); 7];
    for _ in 0..opts.max_steps {
        if t >= t_final {
            return Ok((y, accepted));
        }
        let last = t + h >= t_final;
        if last {
            h = t_final - t;
        }
        k[0].copy_from(&k1);
        let mut y_new = y.clone();
        for s in 1..7 {
            let mut stage = y.clone();
            for (j, kj) in k.iter().enumerate().take(s) {
                if A[s][j] != 0.0 {
                    stage.axpy(h * A[s][j], kj, 1.0);
                }
            }
            if s == 6 {
                y_new = stage.clone();
            }
            k[s] = f(&stage);
        }
        let mut err = DVector::zeros(n);
        for (s, ks) in k.iter().enumerate() {
            if E[s] != 0.0 {
                err.axpy(h * E[s], ks, 1.0);
            }
        }
        let err_norm = scaled_norm(&err, &y, &y_new);
        if !err_norm.is_finite() {
            return Err(Error::Reference(format!("non-finite error estimate at t = {t}")));
        }
        if err_norm <= 1.0 {
            t = if last { t_final } else { t + h };
            y = y_new;
            k1 = k[6].clone();
            accepted += 1;
        }
        let factor = if err_norm == 0.0 {
            5.0
        } else {
            (0.9 * err_norm.powf(-0.2)).clamp(0.2, 5.0)
        };
        let factor = if err_norm > 1.0 { factor.min(1.0) } else { factor };
        h *= factor;
        if h < 1e-14 * t_final {
            return Err(Error::Reference(format!("step size underflow at t = {t}")));
        }
    }
    Err(Error::Reference(format!(
        "exceeded {} steps before reaching T = {t_final}",
        opts.max_steps
    )))
}
