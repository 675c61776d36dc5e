//! Time-integration loops for the LIM and EE2 schemes.
//!
//! Both adaptive controllers are a-posteriori: a step is always accepted and
//! the predictor-corrector estimate only sets the size of the next one.

mod reference;

pub use reference::{dopri5, reference_solve, Dopri5Options, ReferenceMethod};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::diag::{discrete_energy, mass, mass_deviation_from};
use crate::error::{check_dim, Error, Result};
use crate::krylov::{ee2_constant_step_with, ee2_krylov_step_with, KrylovOptions, TraceMode};
use crate::lim::lim_step;
use crate::operator::LinearOperator;
use crate::problem::{CahnHilliardProblem, NormMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Lim,
    Ee2,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::Lim => "lim",
            Scheme::Ee2 => "ee2",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub scheme: Scheme,
    pub adaptive: bool,
    pub use_eyre: bool,
    /// Initial (adaptive) or constant step size.
    pub tau0: f64,
    pub t_final: f64,
    /// Accuracy tolerance of the adaptive controllers; also sets `tol_phi` for EE2.
    pub tol: f64,
    /// Krylov dimension limit (EE2 only).
    pub m_max: usize,
    pub norm_mode: NormMode,
    /// Limit on step growth per step for adaptive LIM; `None` applies the
    /// controller literally.
    pub lim_growth_cap: Option<f64>,
    pub trace: TraceMode,
    /// Step halvings allowed when an adaptive EE2 Krylov sweep stalls.
    pub max_retries: usize,
    /// Fixed Krylov tolerance instead of the per-step selection rule.
    pub tol_phi: Option<f64>,
    /// Upper bound on any step.
    pub tau_max: Option<f64>,
}

impl SolverConfig {
    pub fn new(scheme: Scheme, adaptive: bool, tau0: f64, t_final: f64, tol: f64) -> Self {
        Self {
            scheme,
            adaptive,
            use_eyre: false,
            tau0,
            t_final,
            tol,
            m_max: 30,
            norm_mode: NormMode::ExactProduct,
            lim_growth_cap: Some(2.0),
            trace: TraceMode::Bisection,
            max_retries: 5,
            tol_phi: None,
            tau_max: None,
        }
    }

    pub fn with_m_max(mut self, m_max: usize) -> Self {
        self.m_max = m_max;
        self
    }

    pub fn with_eyre(mut self, use_eyre: bool) -> Self {
        self.use_eyre = use_eyre;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
            }
        };
        positive("tau0", self.tau0)?;
        positive("T", self.t_final)?;
        positive("tol", self.tol)?;
        if self.m_max == 0 {
            return Err(Error::InvalidParameter("m_max must be at least 1".into()));
        }
        if let Some(cap) = self.lim_growth_cap {
            if !(cap >= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "LIM growth cap must be >= 1, got {cap}"
                )));
            }
        }
        if let Some(t) = self.tol_phi {
            positive("tol_phi", t)?;
        }
        if let Some(t) = self.tau_max {
            positive("tau_max", t)?;
        }
        Ok(())
    }
}

/// Diagnostics of one accepted step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub n: usize,
    /// Time reached by the step.
    pub t: f64,
    pub tau: f64,
    /// Applications of `Â` made by the scheme itself.
    pub matvecs: u64,
    /// Right-hand-side evaluations for the error estimate, one `Â` each.
    pub pc_matvecs: u64,
    pub est: Option<f64>,
    pub energy: Option<f64>,
    pub mass: f64,
    pub mass_dev: f64,
    /// Krylov dimension of the (largest) sweep, EE2 only.
    pub m_used: Option<usize>,
    /// Chebyshev order, LIM only.
    pub p: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub y_final: DVector<f64>,
    pub records: Vec<StepRecord>,
    pub initial_energy: Option<f64>,
    pub initial_mass: f64,
}

impl RunOutput {
    pub fn scheme_matvecs(&self) -> u64 {
        self.records.iter().map(|r| r.matvecs).sum()
    }

    pub fn pc_matvecs(&self) -> u64 {
        self.records.iter().map(|r| r.pc_matvecs).sum()
    }

    pub fn total_matvecs(&self) -> u64 {
        self.scheme_matvecs() + self.pc_matvecs()
    }

    pub fn final_time(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.t)
    }
}

/// Predictor-corrector estimate: the trapezoidal corrector
/// `y_pc = y^n + tau/2 (f(y^n) + f(y^{n+1}))` and `est = |y^{n+1} - y_pc| / |y_pc|`.
#[derive(Debug, Clone)]
pub struct PcEstimate {
    pub y_pc: DVector<f64>,
    pub est: f64,
    /// Set when `y_pc = 0` and `est` is the absolute difference.
    pub absolute: bool,
}

/// Corrector from precomputed right-hand sides `f(y^n)` and `f(y^{n+1})`.
pub fn pc_estimate_from(
    y_n: &DVector<f64>,
    y_np1: &DVector<f64>,
    rhs_n: &DVector<f64>,
    rhs_np1: &DVector<f64>,
    tau: f64,
) -> PcEstimate {
    let y_pc = y_n + (rhs_n + rhs_np1) * (0.5 * tau);
    let diff = (y_np1 - &y_pc).norm();
    let denom = y_pc.norm();
    if denom == 0.0 {
        PcEstimate {
            y_pc,
            est: diff,
            absolute: true,
        }
    } else {
        PcEstimate {
            y_pc,
            est: diff / denom,
            absolute: false,
        }
    }
}

pub fn pc_estimate(
    problem: &CahnHilliardProblem,
    y_n: &DVector<f64>,
    y_np1: &DVector<f64>,
    tau: f64,
) -> Result<PcEstimate> {
    check_dim(y_n.len(), y_np1.len())?;
    let rhs_n = problem.rhs(y_n)?;
    let rhs_np1 = problem.rhs(y_np1)?;
    Ok(pc_estimate_from(y_n, y_np1, &rhs_n, &rhs_np1, tau))
}

/// `tau (tol / est)`, limited to `cap * tau` when a cap is given; `est = 0` grows by the cap (default 2).
pub fn lim_tau_update(tau: f64, est: f64, tol: f64, cap: Option<f64>) -> f64 {
    if est == 0.0 {
        return cap.unwrap_or(2.0) * tau;
    }
    let raw = tol / est * tau;
    match cap {
        Some(c) => raw.min(c * tau),
        None => raw,
    }
}

/// `min(5/4 tau, sqrt(tol / est) tau)`.
pub fn ee2_tau_update(tau: f64, est: f64, tol: f64) -> f64 {
    if est == 0.0 {
        return 1.25 * tau;
    }
    (1.25 * tau).min((tol / est).sqrt() * tau)
}

/// `max(min(|ĝ| / (10 beta), 1/10, 10 tol), 1e-7)`.
pub fn tol_phi_select(g_norm: f64, beta: f64, tol: f64) -> f64 {
    if beta == 0.0 {
        return 0.1;
    }
    (g_norm / (10.0 * beta)).min(0.1).min(10.0 * tol).max(1e-7)
}

/// Bookkeeping shared by all loops.
struct Trace<'a> {
    problem: &'a CahnHilliardProblem,
    records: Vec<StepRecord>,
    mass0: f64,
}

impl<'a> Trace<'a> {
    fn new(problem: &'a CahnHilliardProblem, y0: &DVector<f64>) -> Self {
        Self {
            problem,
            records: Vec::new(),
            mass0: mass(y0),
        }
    }

    fn energy(&self, y: &DVector<f64>) -> Option<f64> {
        self.problem
            .grid()
            .map(|g| discrete_energy(g, self.problem.epsilon(), y))
    }

    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        t: f64,
        tau: f64,
        y: &DVector<f64>,
        matvecs: u64,
        pc_matvecs: u64,
        est: Option<f64>,
        m_used: Option<usize>,
        p: Option<usize>,
    ) {
        let m = mass(y);
        let record = StepRecord {
            n: self.records.len() + 1,
            t,
            tau,
            matvecs,
            pc_matvecs,
            est,
            energy: self.energy(y),
            mass: m,
            mass_dev: mass_deviation_from(m, self.mass0).value,
            m_used,
            p,
        };
        self.records.push(record);
    }

    fn finish(self, y0: &DVector<f64>, y_final: DVector<f64>) -> RunOutput {
        RunOutput {
            initial_energy: self.energy(y0),
            initial_mass: self.mass0,
            y_final,
            records: self.records,
        }
    }
}

fn ensure_finite(y: &DVector<f64>) -> Result<()> {
    if y.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

/// Clamp the proposed step so the loop lands on `t_final`; returns the step
/// and whether it is the last one.
fn clamp_step(t: f64, tau: f64, config: &SolverConfig) -> (f64, bool) {
    let tau = config.tau_max.map_or(tau, |m| tau.min(m));
    if t + tau >= config.t_final {
        (config.t_final - t, true)
    } else {
        (tau, false)
    }
}

fn check_problem(problem: &CahnHilliardProblem, config: &SolverConfig, y0: &DVector<f64>) -> Result<()> {
    config.validate()?;
    check_dim(problem.dim(), y0.len())?;
    if problem.use_eyre() != config.use_eyre {
        return Err(Error::InvalidParameter(
            "problem splitting does not match config.use_eyre".into(),
        ));
    }
    Ok(())
}

/// Dispatch on `config.scheme` and `config.adaptive`.
pub fn run(problem: &CahnHilliardProblem, config: &SolverConfig, y0: &DVector<f64>) -> Result<RunOutput> {
    match (config.scheme, config.adaptive) {
        (Scheme::Lim, true) => run_adaptive_lim(problem, config, y0),
        (Scheme::Ee2, true) => run_adaptive_ee2(problem, config, y0),
        (_, false) => run_constant(problem, config, y0),
    }
}

/// Adaptive LIM: LIM step, predictor-corrector estimate, `tau <- tau tol / est`.
pub fn run_adaptive_lim(
    problem: &CahnHilliardProblem,
    config: &SolverConfig,
    y0: &DVector<f64>,
) -> Result<RunOutput> {
    check_problem(problem, config, y0)?;
    let mut trace = Trace::new(problem, y0);
    let mut y = y0.clone();
    let mut rhs_y = problem.rhs(&y)?;
    let mut pending_pc = 1;
    let mut t = 0.0;
    let mut tau = config.tau0;
    while t < config.t_final {
        let (step_tau, last) = clamp_step(t, tau, config);
        let n = trace.records.len() + 1;
        let sys = problem.linearize(&y)?;
        let step = lim_step(&sys, &y, step_tau, config.norm_mode).map_err(|e| e.at_step(n, t, &y))?;
        ensure_finite(&step.y_next).map_err(|e| e.at_step(n, t, &y))?;
        let rhs_next = problem.rhs(&step.y_next)?;
        let pc = pc_estimate_from(&y, &step.y_next, &rhs_y, &rhs_next, step_tau);
        t = if last { config.t_final } else { t + step_tau };
        trace.push(
            t,
            step_tau,
            &step.y_next,
            step.matvecs as u64,
            pending_pc + 1,
            Some(pc.est),
            None,
            Some(step.p),
        );
        pending_pc = 0;
        tau = lim_tau_update(step_tau, pc.est, config.tol, config.lim_growth_cap);
        y = step.y_next;
        rhs_y = rhs_next;
    }
    Ok(trace.finish(y0, y))
}

/// Adaptive EE2: residual-time Krylov step (which may shorten `tau`),
/// predictor-corrector estimate, `tau <- min(5/4 tau, sqrt(tol / est) tau)`.
pub fn run_adaptive_ee2(
    problem: &CahnHilliardProblem,
    config: &SolverConfig,
    y0: &DVector<f64>,
) -> Result<RunOutput> {
    check_problem(problem, config, y0)?;
    let mut trace = Trace::new(problem, y0);
    let mut y = y0.clone();
    // f(y^n) = ĝ - Â y^n is both the Krylov start vector and half of the corrector
    let mut rhs_y = problem.rhs(&y)?;
    let mut pending_pc = 1;
    let mut t = 0.0;
    let mut tau = config.tau0;
    while t < config.t_final {
        let (mut step_tau, last) = clamp_step(t, tau, config);
        let n = trace.records.len() + 1;
        let sys = problem.linearize(&y)?;
        let tol_phi = config
            .tol_phi
            .unwrap_or_else(|| tol_phi_select(sys.g_hat().norm(), rhs_y.norm(), config.tol));
        let opts = KrylovOptions {
            tol_phi,
            m_max: config.m_max,
            trace: config.trace,
        };
        let mut retries = 0;
        let step = loop {
            match ee2_krylov_step_with(&sys, &y, &rhs_y, step_tau, opts) {
                Ok(s) => break s,
                Err(Error::KrylovStall { .. }) if retries < config.max_retries => {
                    retries += 1;
                    step_tau *= 0.5;
                }
                Err(e) => return Err(e.at_step(n, t, &y)),
            }
        };
        let landed = last && retries == 0 && step.tau == step_tau;
        ensure_finite(&step.y_next).map_err(|e| e.at_step(n, t, &y))?;
        let rhs_next = problem.rhs(&step.y_next)?;
        let pc = pc_estimate_from(&y, &step.y_next, &rhs_y, &rhs_next, step.tau);
        t = if landed { config.t_final } else { t + step.tau };
        trace.push(
            t,
            step.tau,
            &step.y_next,
            sys.matvecs(),
            pending_pc + 1,
            Some(pc.est),
            Some(step.m_used),
            None,
        );
        pending_pc = 0;
        tau = ee2_tau_update(step.tau, pc.est, config.tol);
        y = step.y_next;
        rhs_y = rhs_next;
    }
    Ok(trace.finish(y0, y))
}

/// Constant step `tau0`, the last step shortened to land on `T`.
/// EE2 covers each step fully with restarted Krylov sweeps.
pub fn run_constant(
    problem: &CahnHilliardProblem,
    config: &SolverConfig,
    y0: &DVector<f64>,
) -> Result<RunOutput> {
    check_problem(problem, config, y0)?;
    let mut trace = Trace::new(problem, y0);
    let mut y = y0.clone();
    let mut t = 0.0;
    while t < config.t_final {
        let (tau, last) = clamp_step(t, config.tau0, config);
        let n = trace.records.len() + 1;
        let sys = problem.linearize(&y)?;
        let (y_next, m_used, p) = match config.scheme {
            Scheme::Lim => {
                let step = lim_step(&sys, &y, tau, config.norm_mode).map_err(|e| e.at_step(n, t, &y))?;
                (step.y_next, None, Some(step.p))
            }
            Scheme::Ee2 => {
                let r0 = sys.g_hat() - sys.apply(&y);
                let tol_phi = config
                    .tol_phi
                    .unwrap_or_else(|| tol_phi_select(sys.g_hat().norm(), r0.norm(), config.tol));
                let opts = KrylovOptions {
                    tol_phi,
                    m_max: config.m_max,
                    trace: config.trace,
                };
                let out = ee2_constant_step_with(&sys, sys.g_hat(), &y, Some(&r0), tau, opts)
                    .map_err(|e| e.at_step(n, t, &y))?;
                (out.y_next, Some(out.m_used), None)
            }
        };
        ensure_finite(&y_next).map_err(|e| e.at_step(n, t, &y))?;
        t = if last { config.t_final } else { t + tau };
        trace.push(t, tau, &y_next, sys.matvecs(), 0, None, m_used, p);
        y = y_next;
    }
    Ok(trace.finish(y0, y))
}
