use crate::error::{Error, Result};

use super::{Matrix, Scalar};

/// Compressed sparse row matrix. Used for block-diagonal graph propagation
/// across a batch of small graphs.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix<S> {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<S>,
}

impl<S: Scalar> CsrMatrix<S> {
    pub fn from_dense(m: &Matrix<S>) -> Self {
        Self::block_diagonal(std::slice::from_ref(m))
    }

    /// Places each block on the diagonal; zero entries are dropped.
    pub fn block_diagonal(blocks: &[Matrix<S>]) -> Self {
        let rows: usize = blocks.iter().map(Matrix::rows).sum();
        let cols: usize = blocks.iter().map(Matrix::cols).sum();
        let mut indptr = Vec::with_capacity(rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        let mut col_offset = 0;
        for block in blocks {
            for r in 0..block.rows() {
                for (c, &v) in block.row(r).iter().enumerate() {
                    if v != S::zero() {
                        indices.push(col_offset + c);
                        values.push(v);
                    }
                }
                indptr.push(indices.len());
            }
            col_offset += block.cols();
        }
        Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn scale(mut self, factor: S) -> Self {
        self.values.iter_mut().for_each(|v| *v *= factor);
        self
    }

    pub fn to_dense(&self) -> Matrix<S> {
        let mut m = Matrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                m.set(r, self.indices[k], self.values[k]);
            }
        }
        m
    }

    pub fn mul_dense(&self, x: &Matrix<S>) -> Result<Matrix<S>> {
        if self.cols != x.rows() {
            return Err(Error::ShapeMismatch {
                op: "sparse_matmul",
                left: self.shape(),
                right: x.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, x.cols());
        for r in 0..self.rows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                let a = self.values[k];
                let src = x.row(self.indices[k]);
                for (o, &s) in out.row_mut(r).iter_mut().zip(src) {
                    *o += a * s;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · x`.
    pub fn transpose_mul_dense(&self, x: &Matrix<S>) -> Result<Matrix<S>> {
        if self.rows != x.rows() {
            return Err(Error::ShapeMismatch {
                op: "sparse_matmul_t",
                left: self.shape(),
                right: x.shape(),
            });
        }
        let mut out = Matrix::zeros(self.cols, x.cols());
        for r in 0..self.rows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                let a = self.values[k];
                let dst = self.indices[k];
                for (o, &s) in out.row_mut(dst).iter_mut().zip(x.row(r)) {
                    *o += a * s;
                }
            }
        }
        Ok(out)
    }
}
