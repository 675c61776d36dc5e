use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A Chebyshev iterate produced NaN or infinity.
    #[error("LIM step blew up: non-finite iterate at iteration {iteration} of {total} (p = {order})")]
    BlowUp {
        order: usize,
        iteration: usize,
        total: usize,
    },

    /// The residual-time search could not find any positive admissible step.
    #[error("Krylov step made no progress: residual {resnorm:.3e} exceeds tol_phi {tol:.3e} for every s > 0 (m_max = {m_max})")]
    KrylovStall { resnorm: f64, tol: f64, m_max: usize },

    #[error("state became non-finite")]
    NonFinite,

    #[error("reference solver failed: {0}")]
    Reference(String),

    #[error("step {step} at t = {t} (state checksum {checksum:.16e}): {source}")]
    Step {
        step: usize,
        t: f64,
        /// Sum of `|y_i|` over the state the failed step started from.
        checksum: f64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at_step(self, step: usize, t: f64, state: &nalgebra::DVector<f64>) -> Self {
        Error::Step {
            step,
            t,
            checksum: state.lp_norm(1),
            source: Box::new(self),
        }
    }

    /// True for numerical failures of the integrators, as opposed to bad input or I/O.
    pub fn is_solver_failure(&self) -> bool {
        match self {
            Error::BlowUp { .. }
            | Error::KrylovStall { .. }
            | Error::NonFinite
            | Error::Reference(_) => true,
            Error::Step { source, .. } => source.is_solver_failure(),
            _ => false,
        }
    }

    pub fn is_config_error(&self) -> bool {
        match self {
            Error::InvalidGrid(_) | Error::InvalidParameter(_) | Error::DimensionMismatch { .. } => {
                true
            }
            Error::Step { source, .. } => source.is_config_error(),
            _ => false,
        }
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}
