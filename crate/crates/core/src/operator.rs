use nalgebra::{DMatrix, DVector};

use crate::sparse::CsrMatrix;

/// A square linear map applied to vectors of length [`LinearOperator::dim`].
///
/// Implementations must be safe to apply concurrently.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;

    /// `out = Op * x`. Both slices have length `dim()`.
    fn apply_into(&self, x: &[f64], out: &mut [f64]);

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        self.apply_into(x.as_slice(), out.as_mut_slice());
        out
    }
}

impl LinearOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        assert_eq!(self.nrows(), self.ncols());
        self.nrows()
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }
}

impl LinearOperator for CsrMatrix {
    fn dim(&self) -> usize {
        assert_eq!(self.nrows(), self.ncols());
        self.nrows()
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        self.mul_vec_into(x, out);
    }
}
