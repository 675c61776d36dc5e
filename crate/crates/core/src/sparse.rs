//! Minimal compressed-sparse-row matrix used for the Laplacian and the
//! explicitly composed linearized operator.

use nalgebra::{DMatrix, DVector};

/// Square or rectangular CSR matrix with sorted, duplicate-free column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Assemble from (row, col, value) triplets. Duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nrows];
        for &(i, j, v) in triplets {
            assert!(i < nrows && j < ncols, "triplet ({i}, {j}) out of bounds");
            rows[i].push((j, v));
        }
        Self::from_rows(nrows, ncols, rows)
    }

    fn from_rows(nrows: usize, ncols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(j, _)| j);
            let mut iter = row.into_iter().peekable();
            while let Some((j, mut v)) = iter.next() {
                while let Some(&(k, w)) = iter.peek() {
                    if k != j {
                        break;
                    }
                    v += w;
                    iter.next();
                }
                indices.push(j);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Self {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut triplets = Vec::new();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if m[(i, j)] != 0.0 {
                    triplets.push((i, j, m[(i, j)]));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), &triplets)
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&DVector::from_element(n, 1.0))
    }

    pub fn from_diagonal(d: &DVector<f64>) -> Self {
        let n = d.len();
        Self {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: d.iter().copied().collect(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterate the stored entries of row `i` as (column, value).
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.indptr[i]..self.indptr[i + 1];
        self.indices[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    /// `out = self * x`. Panics on dimension mismatch.
    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(out.len(), self.nrows);
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.indptr[i]..self.indptr[i + 1] {
                acc += self.values[k] * x[self.indices[k]];
            }
            *o = acc;
        }
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.nrows);
        self.mul_vec_into(x.as_slice(), out.as_mut_slice());
        out
    }

    /// Sparse-sparse product `self * rhs`.
    pub fn mul(&self, rhs: &CsrMatrix) -> CsrMatrix {
        assert_eq!(self.ncols, rhs.nrows, "inner dimensions differ");
        let mut acc = vec![0.0; rhs.ncols];
        let mut marker = vec![usize::MAX; rhs.ncols];
        let mut rows = Vec::with_capacity(self.nrows);
        for i in 0..self.nrows {
            let mut cols = Vec::new();
            for (k, a) in self.row(i) {
                for (j, b) in rhs.row(k) {
                    if marker[j] != i {
                        marker[j] = i;
                        acc[j] = 0.0;
                        cols.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            rows.push(cols.into_iter().map(|j| (j, acc[j])).collect());
        }
        Self::from_rows(self.nrows, rhs.ncols, rows)
    }

    /// `alpha * self + beta * rhs`.
    pub fn add_scaled(&self, alpha: f64, rhs: &CsrMatrix, beta: f64) -> CsrMatrix {
        assert_eq!((self.nrows, self.ncols), (rhs.nrows, rhs.ncols));
        let rows = (0..self.nrows)
            .map(|i| {
                self.row(i)
                    .map(|(j, v)| (j, alpha * v))
                    .chain(rhs.row(i).map(|(j, v)| (j, beta * v)))
                    .collect()
            })
            .collect();
        Self::from_rows(self.nrows, self.ncols, rows)
    }

    /// Maximum absolute column sum.
    pub fn one_norm(&self) -> f64 {
        let mut sums = vec![0.0; self.ncols];
        for (&j, &v) in self.indices.iter().zip(&self.values) {
            sums[j] += v.abs();
        }
        sums.into_iter().fold(0.0, f64::max)
    }

    pub fn diagonal(&self) -> DVector<f64> {
        let n = self.nrows.min(self.ncols);
        DVector::from_iterator(
            n,
            (0..n).map(|i| self.row(i).find(|&(j, _)| j == i).map_or(0.0, |(_, v)| v)),
        )
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                m[(i, j)] += v;
            }
        }
        m
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut triplets = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                triplets.push((j, i, v));
            }
        }
        Self::from_triplets(self.ncols, self.nrows, &triplets)
    }

    /// Exact structural and numerical symmetry check up to `tol` absolute.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.nrows != self.ncols {
            return false;
        }
        let t = self.transpose();
        let diff = self.add_scaled(1.0, &t, -1.0);
        diff.values.iter().all(|v| v.abs() <= tol)
    }
}
