use super::matrix::DenseMatrix;
use crate::error::{Error, Result};

/// Square CSR matrix with explicit values, used as a constant operator
/// on the left of dense products.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from per-row `(column, value)` lists.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        offsets.push(0);
        for mut r in rows {
            r.sort_by_key(|&(c, _)| c);
            for (c, v) in r {
                indices.push(c);
                values.push(v);
            }
            offsets.push(indices.len());
        }
        Self {
            n,
            offsets,
            indices,
            values,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.offsets[i]..self.offsets[i + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                d.set(i, j, v);
            }
        }
        d
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| self.row(i).all(|(j, v)| (self.get(j, i) - v).abs() <= tol))
    }

    /// `self · x`
    pub fn matmul(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.rows() != self.n {
            return Err(Error::Shape {
                op: "spmm",
                detail: format!("{0}x{0} sparse times {1}x{2}", self.n, x.rows(), x.cols()),
            });
        }
        let mut out = DenseMatrix::zeros(self.n, x.cols());
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                for (o, &b) in out.row_mut(i).iter_mut().zip(x.row(j)) {
                    *o += v * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · x`
    pub fn t_matmul(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.rows() != self.n {
            return Err(Error::Shape {
                op: "spmm_t",
                detail: format!(
                    "({0}x{0})ᵀ sparse times {1}x{2}",
                    self.n,
                    x.rows(),
                    x.cols()
                ),
            });
        }
        let mut out = DenseMatrix::zeros(self.n, x.cols());
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                for (o, &b) in out.row_mut(j).iter_mut().zip(x.row(i)) {
                    *o += v * b;
                }
            }
        }
        Ok(out)
    }
}
