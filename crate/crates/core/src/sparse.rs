//! Compressed sparse row storage plus a thin wrapper around faer's sparse LU.

use std::sync::Once;

use faer::prelude::*;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMat, SymbolicSparseColMat};
use faer::Mat;

use crate::error::{Error, Result};

/// Accumulates `(row, col, value)` entries. Conversion sums duplicates in
/// insertion order, so a fixed element loop yields bit-identical matrices.
#[derive(Debug, Clone, Default)]
pub struct TripletBuilder {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::with_capacity(cap),
        }
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        self.entries.push((row, col, value));
    }

    pub fn extend(&mut self, other: TripletBuilder) {
        self.entries.extend(other.entries);
    }

    pub fn build(mut self) -> CsrMatrix {
        // stable: equal (row, col) keep insertion order
        self.entries.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; self.nrows + 1];
        let mut col_idx = Vec::with_capacity(self.entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in self.entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..self.nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            row_ptr,
            col_idx,
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            row_ptr: vec![0; nrows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
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

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).filter(|&(c, _)| c == j).map(|(_, v)| v).sum()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|i| self.row(i).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    /// `A^T y`.
    pub fn transpose_matvec(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.nrows);
        let mut out = vec![0.0; self.ncols];
        for (i, &yi) in y.iter().enumerate() {
            for (c, v) in self.row(i) {
                out[c] += v * yi;
            }
        }
        out
    }

    /// `w^T A v`.
    pub fn bilinear(&self, w: &[f64], v: &[f64]) -> f64 {
        assert_eq!(w.len(), self.nrows);
        (0..self.nrows)
            .map(|i| w[i] * self.row(i).map(|(c, a)| a * v[c]).sum::<f64>())
            .sum()
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut b = TripletBuilder::with_capacity(self.ncols, self.nrows, self.nnz());
        for i in 0..self.nrows {
            for (c, v) in self.row(i) {
                b.push(c, i, v);
            }
        }
        b.build()
    }

    pub fn scaled(&self, s: f64) -> CsrMatrix {
        let mut m = self.clone();
        for v in &mut m.values {
            *v *= s;
        }
        m
    }

    /// `self + s * other`. The pattern is the union of both patterns
    /// (explicit zeros are kept).
    pub fn add_scaled(&self, other: &CsrMatrix, s: f64) -> CsrMatrix {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut row_ptr = Vec::with_capacity(self.nrows + 1);
        let mut col_idx = Vec::with_capacity(self.nnz() + other.nnz());
        let mut values = Vec::with_capacity(self.nnz() + other.nnz());
        row_ptr.push(0);
        for i in 0..self.nrows {
            let (a0, a1) = (self.row_ptr[i], self.row_ptr[i + 1]);
            let (b0, b1) = (other.row_ptr[i], other.row_ptr[i + 1]);
            let (mut a, mut b) = (a0, b0);
            while a < a1 || b < b1 {
                let ca = if a < a1 { self.col_idx[a] } else { usize::MAX };
                let cb = if b < b1 { other.col_idx[b] } else { usize::MAX };
                if ca < cb {
                    col_idx.push(ca);
                    values.push(self.values[a]);
                    a += 1;
                } else if cb < ca {
                    col_idx.push(cb);
                    values.push(s * other.values[b]);
                    b += 1;
                } else {
                    col_idx.push(ca);
                    values.push(self.values[a] + s * other.values[b]);
                    a += 1;
                    b += 1;
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let t = self.transpose();
        let d = self.add_scaled(&t, -1.0);
        d.max_abs() <= tol * self.max_abs().max(1.0)
    }
}

static SEQUENTIAL: Once = Once::new();

fn ensure_sequential() {
    SEQUENTIAL.call_once(|| faer::set_global_parallelism(faer::Par::Seq));
}

/// Square sparse matrix in column-compressed form ready for factorization.
pub struct SquareSystem {
    n: usize,
    mat: SparseColMat<usize, f64>,
}

impl SquareSystem {
    /// Builds from per-column `(row, value)` lists. Rows within a column must
    /// be strictly increasing.
    pub fn from_columns(n: usize, columns: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        col_ptr.push(0);
        for col in columns {
            for (r, v) in col {
                row_idx.push(r);
                values.push(v);
            }
            col_ptr.push(row_idx.len());
        }
        let sym = SymbolicSparseColMat::new_checked(n, n, col_ptr, None, row_idx);
        Ok(Self {
            n,
            mat: SparseColMat::new(sym, values),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn symbolic(&self) -> Result<SymbolicLu<usize>> {
        ensure_sequential();
        SymbolicLu::try_new(self.mat.symbolic())
            .map_err(|e| Error::Singular { detail: format!("symbolic LU: {e:?}"), margin: None })
    }

    pub fn factor(&self, symbolic: Option<&SymbolicLu<usize>>) -> Result<Factorization> {
        ensure_sequential();
        let sym = match symbolic {
            Some(s) => s.clone(),
            None => self.symbolic()?,
        };
        let lu = Lu::try_new_with_symbolic(sym, self.mat.as_ref())
            .map_err(|e| Error::Singular { detail: format!("numeric LU: {e:?}"), margin: None })?;
        Ok(Factorization { n: self.n, lu })
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        let m = self.mat.as_ref();
        for j in 0..self.n {
            let xj = x[j];
            if xj == 0.0 {
                continue;
            }
            for (i, v) in m.row_idx_of_col(j).zip(m.val_of_col(j)) {
                y[i] += v * xj;
            }
        }
        y
    }

    pub fn transpose_matvec(&self, x: &[f64]) -> Vec<f64> {
        let m = self.mat.as_ref();
        (0..self.n)
            .map(|j| m.row_idx_of_col(j).zip(m.val_of_col(j)).map(|(i, v)| v * x[i]).sum())
            .collect()
    }
}

pub struct Factorization {
    n: usize,
    lu: Lu<usize, f64>,
}

impl Factorization {
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        self.solve_impl(rhs, false)
    }

    pub fn solve_transpose(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        self.solve_impl(rhs, true)
    }

    fn solve_impl(&self, rhs: &[f64], transpose: bool) -> Result<Vec<f64>> {
        assert_eq!(rhs.len(), self.n);
        let mut b = Mat::<f64>::from_fn(self.n, 1, |i, _| rhs[i]);
        if transpose {
            self.lu.solve_transpose_in_place(b.as_mut());
        } else {
            self.lu.solve_in_place(b.as_mut());
        }
        let x: Vec<f64> = (0..self.n).map(|i| b[(i, 0)]).collect();
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotANumber("sparse LU solve"));
        }
        Ok(x)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed() {
        let mut b = TripletBuilder::new(2, 3);
        b.push(1, 2, 1.0);
        b.push(0, 0, 2.0);
        b.push(1, 2, 0.5);
        let m = b.build();
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.get(1, 2), 1.5);
        assert_eq!(m.matvec(&[1.0, 1.0, 2.0]), vec![2.0, 3.0]);
        assert_eq!(m.transpose_matvec(&[1.0, 1.0]), vec![2.0, 0.0, 1.5]);
    }

    #[test]
    fn lu_handles_zero_diagonal() {
        // [[0, 1, 1], [2, 0, 0], [0, 0, 3]]
        let cols = vec![vec![(1, 2.0)], vec![(0, 1.0)], vec![(0, 1.0), (2, 3.0)]];
        let s = SquareSystem::from_columns(3, cols).unwrap();
        let f = s.factor(None).unwrap();
        let x = f.solve(&[1.0, 2.0, 3.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && x[1].abs() < 1e-15 && (x[2] - 1.0).abs() < 1e-15);
        let y = f.solve_transpose(&[1.0, 2.0, 3.0]).unwrap();
        assert!((y[0] - 2.0).abs() < 1e-15 && (y[1] - 0.5).abs() < 1e-15);
        let r = s.matvec(&x);
        assert!((r[2] - 3.0).abs() < 1e-15);
    }
}
