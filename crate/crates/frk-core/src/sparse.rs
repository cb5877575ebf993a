//! Minimal row-major sparse matrix.
//!
//! Basis evaluation matrices have a handful of nonzeros per row (only the
//! basis functions whose support circle contains the point), and every
//! operation the predictor needs is a row-wise reduction. A compact CSR
//! layout keeps the crate `no_std`-friendly and avoids pulling in a general
//! sparse-algebra dependency for what is a dozen small kernels.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

/// Row-major sparse matrix with `f64` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct RowSparseMatrix {
    ncols: usize,
    offsets: Vec<usize>,
    entries: Vec<(usize, f64)>,
}

impl RowSparseMatrix {
    /// Build from per-row `(column, value)` lists. Zero values are kept as
    /// given; callers decide what to drop.
    ///
    /// # Panics
    /// Panics if any column index is out of range.
    pub fn from_rows(ncols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        let mut entries = Vec::new();
        offsets.push(0);
        for row in rows {
            for &(col, val) in &row {
                assert!(col < ncols, "column {col} out of range for {ncols} columns");
                entries.push((col, val));
            }
            offsets.push(entries.len());
        }
        Self {
            ncols,
            offsets,
            entries,
        }
    }

    pub fn nrows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    /// Total number of stored entries.
    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// The `(column, value)` entries of row `i`.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.entries[self.offsets[i]..self.offsets[i + 1]]
    }

    /// New matrix keeping only the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        let mut entries = Vec::new();
        offsets.push(0);
        for &i in rows {
            entries.extend_from_slice(self.row(i));
            offsets.push(entries.len());
        }
        Self {
            ncols: self.ncols,
            offsets,
            entries,
        }
    }

    /// `self * v`.
    pub fn mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        assert_eq!(v.len(), self.ncols);
        DVector::from_fn(self.nrows(), |i, _| self.row_dot(i, v))
    }

    /// `self' * v`.
    pub fn tr_mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        assert_eq!(v.len(), self.nrows());
        let mut out = DVector::zeros(self.ncols);
        for i in 0..self.nrows() {
            let vi = v[i];
            for &(col, val) in self.row(i) {
                out[col] += val * vi;
            }
        }
        out
    }

    /// Dot product of row `i` with a dense vector.
    pub fn row_dot(&self, i: usize, v: &DVector<f64>) -> f64 {
        self.row(i).iter().map(|&(col, val)| val * v[col]).sum()
    }

    /// Quadratic form `z_i' M z_i` for row `i`.
    pub fn row_quad_form(&self, i: usize, m: &DMatrix<f64>) -> f64 {
        let row = self.row(i);
        let mut acc = 0.0;
        for &(ca, va) in row {
            for &(cb, vb) in row {
                acc += va * vb * m[(ca, cb)];
            }
        }
        acc
    }

    /// `m * z_i` for a dense `p x ncols` matrix and row `i`.
    pub fn mat_mul_row(&self, m: &DMatrix<f64>, i: usize) -> DVector<f64> {
        assert_eq!(m.ncols(), self.ncols);
        let mut out = DVector::zeros(m.nrows());
        for &(col, val) in self.row(i) {
            out.axpy(val, &m.column(col), 1.0);
        }
        out
    }

    /// `self' * diag(d) * self`, a dense `ncols x ncols` Gram matrix.
    pub fn gram_weighted(&self, d: &DVector<f64>) -> DMatrix<f64> {
        assert_eq!(d.len(), self.nrows());
        let mut out = DMatrix::zeros(self.ncols, self.ncols);
        for i in 0..self.nrows() {
            let di = d[i];
            let row = self.row(i);
            for &(ca, va) in row {
                for &(cb, vb) in row {
                    out[(ca, cb)] += di * va * vb;
                }
            }
        }
        out
    }

    /// `self' * diag(d) * x` for a dense `nrows x p` matrix.
    pub fn tr_mul_diag_dense(&self, d: &DVector<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(d.len(), self.nrows());
        assert_eq!(x.nrows(), self.nrows());
        let mut out = DMatrix::zeros(self.ncols, x.ncols());
        for i in 0..self.nrows() {
            let di = d[i];
            for &(col, val) in self.row(i) {
                let w = val * di;
                for j in 0..x.ncols() {
                    out[(col, j)] += w * x[(i, j)];
                }
            }
        }
        out
    }

    /// `self' * x` for a dense `nrows x p` matrix.
    pub fn tr_mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.nrows());
        let mut out = DMatrix::zeros(self.ncols, x.ncols());
        for i in 0..self.nrows() {
            for &(col, val) in self.row(i) {
                for j in 0..x.ncols() {
                    out[(col, j)] += val * x[(i, j)];
                }
            }
        }
        out
    }

    /// Dense copy, used by tests and small-scale oracles.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.nrows(), self.ncols);
        for i in 0..self.nrows() {
            for &(col, val) in self.row(i) {
                out[(i, col)] += val;
            }
        }
        out
    }
}
