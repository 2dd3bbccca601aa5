//! Dense row-major matrices and the handful of kernels the engine needs.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{mismatch, Error, Result};

/// A dense row-major `rows x cols` matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Matrix")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .finish_non_exhaustive()
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(mismatch("Matrix::from_vec", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows. All rows must have the same length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(mismatch("Matrix::from_rows", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    /// Dense product `self * rhs`.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(mismatch(
                "matmul",
                format_args!("lhs cols == rhs rows ({})", self.cols),
                rhs.rows,
            ));
        }
        let n = rhs.cols;
        let mut out = Matrix::zeros(self.rows, n);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &rhs.data[k * n..(k + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Dense product `self * rhs^T`, i.e. all pairwise row dot products.
    pub fn matmul_transposed(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.cols {
            return Err(mismatch("matmul_transposed", self.cols, rhs.cols));
        }
        let mut out = Matrix::zeros(self.rows, rhs.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..rhs.rows {
                out.data[i * rhs.rows + j] = dot(a, rhs.row(j));
            }
        }
        Ok(out)
    }
}

/// Dense product `a * b`. Free-function form of [`Matrix::matmul`].
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    a.matmul(b)
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Softmax applied independently to every column, stabilized by subtracting
/// the column maximum before exponentiation.
pub fn column_softmax(m: &Matrix) -> Result<Matrix> {
    if !m.is_finite() {
        return Err(Error::NonFinite("column_softmax input"));
    }
    let (rows, cols) = (m.rows, m.cols);
    let mut out = m.clone();
    let mut max = vec![f64::NEG_INFINITY; cols];
    for r in 0..rows {
        for (c, mx) in max.iter_mut().enumerate() {
            *mx = mx.max(m.data[r * cols + c]);
        }
    }
    let mut sum = vec![0.0; cols];
    for r in 0..rows {
        let row = &mut out.data[r * cols..(r + 1) * cols];
        for c in 0..cols {
            let e = libm::exp(row[c] - max[c]);
            row[c] = e;
            sum[c] += e;
        }
    }
    for r in 0..rows {
        let row = &mut out.data[r * cols..(r + 1) * cols];
        for c in 0..cols {
            row[c] /= sum[c];
        }
    }
    Ok(out)
}

/// Solves `a x = b` for symmetric positive-definite `a` by Cholesky factorization.
pub fn solve_spd(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.rows;
    if a.cols != n {
        return Err(mismatch("solve_spd", "square matrix", format_args!("{}x{}", a.rows, a.cols)));
    }
    if b.len() != n {
        return Err(mismatch("solve_spd", n, b.len()));
    }
    let na = nalgebra::DMatrix::from_row_slice(n, n, &a.data);
    let chol = nalgebra::linalg::Cholesky::new(na).ok_or(Error::NotPositiveDefinite)?;
    let x = chol.solve(&nalgebra::DVector::from_column_slice(b));
    Ok(x.iter().copied().collect())
}

/// Modified Gram-Schmidt on the columns (when `rows >= cols`) or on the rows
/// (otherwise), producing a semi-orthogonal matrix.
pub fn orthonormalize(m: &mut Matrix) {
    if m.rows >= m.cols {
        let mut t = m.transpose();
        orthonormalize_rows(&mut t);
        *m = t.transpose();
    } else {
        orthonormalize_rows(m);
    }
}

fn orthonormalize_rows(m: &mut Matrix) {
    let cols = m.cols;
    for i in 0..m.rows {
        for j in 0..i {
            let (head, tail) = m.data.split_at_mut(i * cols);
            let prev = &head[j * cols..(j + 1) * cols];
            let cur = &mut tail[..cols];
            let proj = dot(prev, cur);
            for (c, p) in cur.iter_mut().zip(prev) {
                *c -= proj * p;
            }
        }
        let row = m.row_mut(i);
        let norm = libm::sqrt(dot(row, row));
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
}
