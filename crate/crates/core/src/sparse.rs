//! Compressed sparse row matrices for the sampling operators.

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Real};

/// CSR matrix. Column indices are strictly increasing within a row and no
/// explicit zeros are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets. Duplicates are summed and
    /// entries that end up zero are dropped.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut t: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        for &(r, c, v) in &t {
            if r >= rows || c >= cols {
                return Err(Error::InvalidArgument(format!(
                    "entry ({r}, {c}) outside a {rows}x{cols} matrix"
                )));
            }
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!("non-finite entry at ({r}, {c})")));
            }
        }
        t.sort_by_key(|e| (e.0, e.1));

        let mut row_offsets = vec![0usize; rows + 1];
        let mut col_indices = Vec::with_capacity(t.len());
        let mut values = Vec::with_capacity(t.len());
        let mut i = 0;
        while i < t.len() {
            let (r, c, mut v) = t[i];
            i += 1;
            while i < t.len() && t[i].0 == r && t[i].1 == c {
                v += t[i].2;
                i += 1;
            }
            if v != 0.0 {
                col_indices.push(c);
                values.push(v);
                row_offsets[r + 1] += 1;
            }
        }
        for r in 0..rows {
            row_offsets[r + 1] += row_offsets[r];
        }
        Ok(SparseMatrix {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            rows: n,
            cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `(column, value)` pairs of one row.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_offsets[r]..self.row_offsets[r + 1];
        self.col_indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.rows, self.cols);
        for (r, c, v) in self.triplets() {
            m[(r, c)] = v;
        }
        m
    }

    /// Row-major `self · x` where `x` is `cols × width`.
    pub fn mul_dense<T: Real>(&self, x: &[T], width: usize) -> Vec<T> {
        debug_assert_eq!(x.len(), self.cols * width);
        let mut out = vec![T::ZERO; self.rows * width];
        for r in 0..self.rows {
            let dst = &mut out[r * width..(r + 1) * width];
            for (c, v) in self.row(r) {
                let v = T::from_f64(v);
                let src = &x[c * width..(c + 1) * width];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += v * s;
                }
            }
        }
        out
    }

    /// Accumulates `selfᵀ · g` into `acc` (`cols × width`), the backward rule
    /// of [`SparseMatrix::mul_dense`].
    pub fn mul_transpose_dense_acc<T: Real>(&self, g: &[T], width: usize, acc: &mut [T]) {
        debug_assert_eq!(g.len(), self.rows * width);
        debug_assert_eq!(acc.len(), self.cols * width);
        for r in 0..self.rows {
            let src = &g[r * width..(r + 1) * width];
            for (c, v) in self.row(r) {
                let v = T::from_f64(v);
                let dst = &mut acc[c * width..(c + 1) * width];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += v * s;
                }
            }
        }
    }

    /// Matrix with rows and columns relabelled: entry `(r, c)` moves to
    /// `(row_perm[r], col_perm[c])`.
    pub fn permuted(&self, row_perm: &[usize], col_perm: &[usize]) -> SparseMatrix {
        SparseMatrix::from_triplets(
            self.rows,
            self.cols,
            self.triplets().map(|(r, c, v)| (row_perm[r], col_perm[c], v)),
        )
        .expect("permutation keeps entries in range")
    }
}
