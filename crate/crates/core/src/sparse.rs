//! Compressed sparse row storage and the few kernels the solvers need.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsrMatrix {
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        CsrMatrix {
            n_cols,
            indptr: vec![0; n_rows + 1],
            indices: Vec::new(),
            data: Vec::new(),
        }
    }

    /// Builds from per-row `(column, value)` lists. Each row is sorted by
    /// column; repeated columns are summed.
    pub fn from_rows(n_cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(j, _)| j);
            for (j, v) in row {
                if j >= n_cols {
                    return Err(Error::DimensionMismatch {
                        expected: n_cols,
                        found: j + 1,
                    });
                }
                if indices.len() > *indptr.last().unwrap() && *indices.last().unwrap() == j {
                    *data.last_mut().unwrap() += v;
                } else {
                    indices.push(j);
                    data.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Ok(CsrMatrix {
            n_cols,
            indptr,
            indices,
            data,
        })
    }

    /// Dense row-major input; exact zeros are not stored.
    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let n_cols = rows.first().map_or(0, Vec::len);
        let sparse_rows = rows
            .iter()
            .map(|r| {
                assert_eq!(r.len(), n_cols, "ragged dense input");
                r.iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(j, v)| (j, *v))
                    .collect()
            })
            .collect();
        Self::from_rows(n_cols, sparse_rows).expect("columns in range by construction")
    }

    pub fn n_rows(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.data[a..b])
    }

    pub fn row_values_mut(&mut self, i: usize) -> &mut [f64] {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        &mut self.data[a..b]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (idx, vals) = self.row(i);
        idx.binary_search(&j).map_or(0.0, |k| vals[k])
    }

    pub fn row_dot(&self, i: usize, dense: &[f64]) -> f64 {
        let (idx, vals) = self.row(i);
        idx.iter().zip(vals).map(|(&j, v)| v * dense[j]).sum()
    }

    pub fn row_norm(&self, i: usize) -> f64 {
        self.row(i).1.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `X v`
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n_cols);
        (0..self.n_rows())
            .into_par_iter()
            .map(|i| self.row_dot(i, v))
            .collect()
    }

    /// `Xᵀ u`, accumulated row by row in index order.
    pub fn tr_mul_vec(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.n_rows());
        let mut out = vec![0.0; self.n_cols];
        for (i, &ui) in u.iter().enumerate() {
            if ui == 0.0 {
                continue;
            }
            let (idx, vals) = self.row(i);
            for (&j, v) in idx.iter().zip(vals) {
                out[j] += v * ui;
            }
        }
        out
    }

    pub fn select_rows(&self, rows: &[usize]) -> CsrMatrix {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        indptr.push(0);
        for &i in rows {
            let (idx, vals) = self.row(i);
            indices.extend_from_slice(idx);
            data.extend_from_slice(vals);
            indptr.push(indices.len());
        }
        CsrMatrix {
            n_cols: self.n_cols,
            indptr,
            indices,
            data,
        }
    }

    /// Appends one column holding `values[i]` in row `i`; zeros stay implicit.
    pub fn append_column(&self, values: &[f64]) -> Result<CsrMatrix> {
        if values.len() != self.n_rows() {
            return Err(Error::DimensionMismatch {
                expected: self.n_rows(),
                found: values.len(),
            });
        }
        let new_col = self.n_cols;
        let mut indptr = Vec::with_capacity(self.indptr.len());
        let mut indices = Vec::with_capacity(self.nnz() + values.len());
        let mut data = Vec::with_capacity(self.nnz() + values.len());
        indptr.push(0);
        for (i, &v) in values.iter().enumerate() {
            let (idx, vals) = self.row(i);
            indices.extend_from_slice(idx);
            data.extend_from_slice(vals);
            if v != 0.0 {
                indices.push(new_col);
                data.push(v);
            }
            indptr.push(indices.len());
        }
        Ok(CsrMatrix {
            n_cols: self.n_cols + 1,
            indptr,
            indices,
            data,
        })
    }

    /// Drops the last column.
    pub fn drop_last_column(&self) -> CsrMatrix {
        assert!(self.n_cols > 0);
        let last = self.n_cols - 1;
        let rows = (0..self.n_rows())
            .map(|i| {
                let (idx, vals) = self.row(i);
                idx.iter()
                    .zip(vals)
                    .filter(|(&j, _)| j != last)
                    .map(|(&j, &v)| (j, v))
                    .collect()
            })
            .collect();
        CsrMatrix::from_rows(last, rows).expect("columns in range")
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_rows(), self.n_cols);
        for i in 0..self.n_rows() {
            let (idx, vals) = self.row(i);
            for (&j, &v) in idx.iter().zip(vals) {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// Row inner products `X Xᵀ`. Each entry is an independent sparse-dense
    /// dot product, so the result does not depend on the thread count.
    pub fn gram_rows(&self) -> DMatrix<f64> {
        let n = self.n_rows();
        let upper: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map_init(
                || vec![0.0; self.n_cols],
                |scratch, i| {
                    let (idx, vals) = self.row(i);
                    for (&j, &v) in idx.iter().zip(vals) {
                        scratch[j] = v;
                    }
                    let out = (i..n).map(|k| self.row_dot(k, scratch)).collect();
                    for &j in idx {
                        scratch[j] = 0.0;
                    }
                    out
                },
            )
            .collect();
        let mut g = DMatrix::zeros(n, n);
        for (i, row) in upper.iter().enumerate() {
            for (off, &v) in row.iter().enumerate() {
                g[(i, i + off)] = v;
                g[(i + off, i)] = v;
            }
        }
        g
    }

    /// Weighted column inner products `Xᵀ diag(w) X`, dense p×p.
    pub fn gram_cols(&self, weights: &[f64]) -> DMatrix<f64> {
        let p = self.n_cols;
        let mut g = DMatrix::zeros(p, p);
        for (i, &w) in weights.iter().enumerate().take(self.n_rows()) {
            let (idx, vals) = self.row(i);
            for (a, (&ja, &va)) in idx.iter().zip(vals).enumerate() {
                let wa = w * va;
                for (&jb, &vb) in idx[a..].iter().zip(&vals[a..]) {
                    g[(ja, jb)] += wa * vb;
                }
            }
        }
        for a in 0..p {
            for b in a + 1..p {
                g[(b, a)] = g[(a, b)];
            }
        }
        g
    }

    /// Column-major copy for column access.
    pub fn to_columns(&self) -> Vec<Vec<(usize, f64)>> {
        let mut cols = vec![Vec::new(); self.n_cols];
        for i in 0..self.n_rows() {
            let (idx, vals) = self.row(i);
            for (&j, &v) in idx.iter().zip(vals) {
                cols[j].push((i, v));
            }
        }
        cols
    }
}
