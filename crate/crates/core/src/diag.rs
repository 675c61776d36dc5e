//! Discrete energy, mass and error diagnostics.

use nalgebra::DVector;
use serde::Serialize;

use crate::driver::StepRecord;
use crate::error::{check_dim, Error, Result};
use crate::grid::GridSpec;
use crate::problem::free_energy;

/// Discrete Ginzburg-Landau energy
///
/// ```text
/// E_h(y) = hx hy sum F(y_ij) + eps^2/2 (hy/hx sum (y_{i+1,j} - y_ij)^2 + hx/hy sum (y_{i,j+1} - y_ij)^2)
/// ```
///
/// Mirrored ghost cells make the boundary differences vanish, so only interior
/// differences are summed. The gradient weights reduce to one for square cells.
pub fn discrete_energy(spec: &GridSpec, epsilon: f64, y: &DVector<f64>) -> f64 {
    assert_eq!(spec.len(), y.len(), "state does not match grid");
    let (hx, hy) = (spec.hx(), spec.hy());
    let bulk: f64 = y.iter().map(|&v| free_energy(v)).sum();
    let mut dx2 = 0.0;
    let mut dy2 = 0.0;
    for j in 0..spec.ny {
        for i in 0..spec.nx {
            let c = y[spec.index(i, j)];
            if i + 1 < spec.nx {
                let d = y[spec.index(i + 1, j)] - c;
                dx2 += d * d;
            }
            if j + 1 < spec.ny {
                let d = y[spec.index(i, j + 1)] - c;
                dy2 += d * d;
            }
        }
    }
    hx * hy * bulk + 0.5 * epsilon * epsilon * (hy / hx * dx2 + hx / hy * dy2)
}

/// Total mass `sum_j y_j`.
pub fn mass(y: &DVector<f64>) -> f64 {
    y.sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MassDeviation {
    pub value: f64,
    /// `false` when the initial mass is zero and `value` is the absolute drift.
    pub relative: bool,
}

/// `|m^n / m^0 - 1|`, or `|m^n - m^0|` when `m^0 = 0`.
pub fn mass_deviation(y_n: &DVector<f64>, y_0: &DVector<f64>) -> MassDeviation {
    mass_deviation_from(mass(y_n), mass(y_0))
}

pub fn mass_deviation_from(m_n: f64, m_0: f64) -> MassDeviation {
    if m_0 == 0.0 {
        MassDeviation {
            value: (m_n - m_0).abs(),
            relative: false,
        }
    } else {
        MassDeviation {
            value: ((m_n - m_0) / m_0).abs(),
            relative: true,
        }
    }
}

/// Euclidean `|y - y_ref| / |y_ref|`.
pub fn relative_error(y: &DVector<f64>, y_ref: &DVector<f64>) -> Result<f64> {
    check_dim(y_ref.len(), y.len())?;
    let denom = y_ref.norm();
    if denom == 0.0 {
        return Err(Error::InvalidParameter("reference solution has zero norm".into()));
    }
    Ok((y - y_ref).norm() / denom)
}

/// Time series of diagnostics extracted from a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DiagnosticSeries {
    pub times: Vec<f64>,
    pub energy: Vec<f64>,
    pub mass_deviation: Vec<f64>,
    pub tau_history: Vec<f64>,
    pub matvec_cumulative: Vec<u64>,
}

impl DiagnosticSeries {
    pub fn from_records(records: &[StepRecord]) -> Self {
        let mut series = Self::default();
        let mut total = 0;
        for r in records {
            total += r.matvecs;
            series.times.push(r.t);
            series.energy.push(r.energy.unwrap_or(f64::NAN));
            series.mass_deviation.push(r.mass_dev);
            series.tau_history.push(r.tau);
            series.matvec_cumulative.push(total);
        }
        series
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn max_mass_deviation(&self) -> f64 {
        self.mass_deviation.iter().copied().fold(0.0, f64::max)
    }

    /// Largest energy increase between consecutive samples with `t > after`.
    pub fn max_energy_increase_after(&self, after: f64) -> f64 {
        self.times
            .windows(2)
            .zip(self.energy.windows(2))
            .filter(|(t, _)| t[0] > after)
            .map(|(_, e)| e[1] - e[0])
            .fold(f64::NEG_INFINITY, f64::max)
    }
}
