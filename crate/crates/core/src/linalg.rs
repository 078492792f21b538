//! Small dense linear algebra: a row-major matrix, Cholesky with a jitter
//! ladder, triangular solves and an LU solver for indefinite systems.
//!
//! The matrices in this crate are at most a few hundred rows, so plain loops
//! over contiguous rows are all that is needed.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data. Panics if the length is wrong.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Self { rows, cols, data }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self { rows: rows.len(), cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix { rows: idx.len(), cols: self.cols, data }
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                axpy(a, other.row(k), out_row);
            }
        }
        out
    }

    /// `self * other^T`.
    pub fn matmul_t(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "matmul_t shape mismatch");
        Matrix::from_fn(self.rows, other.rows, |i, j| dot(self.row(i), other.row(j)))
    }

    pub fn mat_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "mat_vec shape mismatch");
        self.row_iter().map(|r| dot(r, v)).collect()
    }

    /// `v^T self`.
    pub fn vec_mat(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, v.len(), "vec_mat shape mismatch");
        let mut out = vec![0.0; self.cols];
        for (i, &a) in v.iter().enumerate() {
            axpy(a, self.row(i), &mut out);
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| f64::max(m, libm::fabs(a - b)))
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.rows == self.cols
            && (0..self.rows)
                .all(|i| (0..i).all(|j| libm::fabs(self[(i, j)] - self[(j, i)]) <= tol))
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn add_diagonal(&mut self, v: f64) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] += v;
        }
    }

    /// `self += c * other`
    pub fn add_scaled(&mut self, other: &Matrix, c: f64) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        axpy(c, &other.data, &mut self.data);
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|x| *x *= c);
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += a * x`
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Lower Cholesky factor `A = L L^T`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Matrix,
}

impl Cholesky {
    /// Factorizes a symmetric positive definite matrix; only the lower
    /// triangle is read.
    pub fn new(a: &Matrix) -> Result<Self> {
        Self::with_pivot_floor(a, 0.0)
    }

    /// Like [`Cholesky::new`] but rejects pivots at or below
    /// `rel_floor * max(diag)`, which catches numerically singular matrices.
    pub fn with_pivot_floor(a: &Matrix, rel_floor: f64) -> Result<Self> {
        let n = a.rows();
        if n != a.cols() {
            return Err(Error::Incompatible("Cholesky of a non-square matrix".into()));
        }
        let max_diag = (0..n).map(|i| a[(i, i)]).fold(0.0, f64::max);
        let floor = rel_floor * max_diag;
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            {
                let lj = l.row(j);
                d -= dot(&lj[..j], &lj[..j]);
            }
            if !(d > floor) || !d.is_finite() {
                return Err(Error::Conditioning { jitter: 0.0 });
            }
            let djj = libm::sqrt(d);
            l[(j, j)] = djj;
            for i in j + 1..n {
                let s = a[(i, j)] - dot(&l.row(i)[..j], &l.row(j)[..j]);
                l[(i, j)] = s / djj;
            }
        }
        Ok(Self { l })
    }

    /// Cholesky with the diagonal jitter ladder used throughout the crate:
    /// try the matrix as is, then add `base` to the diagonal and double it up
    /// to `doublings` times. Returns the factor of the jittered matrix and the
    /// jitter that was applied.
    pub fn with_jitter(a: &Matrix, base: f64, doublings: u32) -> Result<(Self, f64)> {
        if let Ok(c) = Self::new(a) {
            return Ok((c, 0.0));
        }
        let mut jitter = base;
        for _ in 0..=doublings {
            let mut aj = a.clone();
            aj.add_diagonal(jitter);
            if let Ok(c) = Self::new(&aj) {
                return Ok((c, jitter));
            }
            jitter *= 2.0;
        }
        Err(Error::Conditioning { jitter: jitter / 2.0 })
    }

    /// Factor of the leading `k x k` block of the factored matrix.
    pub fn leading(&self, k: usize) -> Cholesky {
        Cholesky { l: Matrix::from_fn(k, k, |i, j| self.l[(i, j)]) }
    }

    pub fn lower(&self) -> &Matrix {
        &self.l
    }

    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    /// Solves `L x = b` in place.
    pub fn solve_lower_in_place(&self, b: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let row = self.l.row(i);
            let s = b[i] - dot(&row[..i], &b[..i]);
            b[i] = s / row[i];
        }
    }

    /// Solves `L^T x = b` in place.
    pub fn solve_upper_in_place(&self, b: &mut [f64]) {
        let n = self.dim();
        for i in (0..n).rev() {
            b[i] /= self.l[(i, i)];
            let bi = b[i];
            let row = self.l.row(i);
            for k in 0..i {
                b[k] -= row[k] * bi;
            }
        }
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_lower_in_place(&mut x);
        self.solve_upper_in_place(&mut x);
        x
    }

    /// `L^{-1} B` for a matrix whose rows are indexed like `L`.
    pub fn solve_lower_rows(&self, b: &Matrix) -> Matrix {
        let n = self.dim();
        assert_eq!(b.rows(), n, "row count mismatch");
        let mut out = b.clone();
        for i in 0..n {
            let lii = self.l[(i, i)];
            for k in 0..i {
                let lik = self.l[(i, k)];
                if lik == 0.0 {
                    continue;
                }
                let (done, rest) = out.data.split_at_mut(i * b.cols());
                axpy(-lik, &done[k * b.cols()..(k + 1) * b.cols()], &mut rest[..b.cols()]);
            }
            out.row_mut(i).iter_mut().for_each(|x| *x /= lii);
        }
        out
    }

    /// `L B` for a matrix whose rows are indexed like `L`.
    pub fn mul_lower_rows(&self, b: &Matrix) -> Matrix {
        let n = self.dim();
        assert_eq!(b.rows(), n, "row count mismatch");
        let mut out = Matrix::zeros(n, b.cols());
        for i in 0..n {
            let row = self.l.row(i);
            let out_row = out.row_mut(i);
            for (k, &lik) in row[..=i].iter().enumerate() {
                axpy(lik, b.row(k), out_row);
            }
        }
        out
    }

    /// Inverse of the factored matrix.
    pub fn inverse(&self) -> Matrix {
        let n = self.dim();
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|x| *x = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        inv
    }

    pub fn log_det(&self) -> f64 {
        (0..self.dim()).map(|i| 2.0 * libm::log(self.l[(i, i)])).sum()
    }
}

/// Solves a general square system by LU with partial pivoting.
///
/// Returns a conditioning error when a pivot falls below `1e-14` times the
/// largest absolute entry of the matrix.
pub fn lu_solve(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.rows();
    if n != a.cols() || b.len() != n {
        return Err(Error::Incompatible("LU system shape mismatch".into()));
    }
    let scale = a.as_slice().iter().fold(0.0, |m, x| f64::max(m, libm::fabs(*x)));
    if scale == 0.0 {
        return Err(Error::Conditioning { jitter: 0.0 });
    }
    let tol = 1e-14 * scale;
    let mut m = a.clone();
    let mut x = b.to_vec();
    for k in 0..n {
        let (p, pmax) = (k..n)
            .map(|i| (i, libm::fabs(m[(i, k)])))
            .fold((k, -1.0), |acc, v| if v.1 > acc.1 { v } else { acc });
        if !(pmax > tol) {
            return Err(Error::Conditioning { jitter: 0.0 });
        }
        if p != k {
            for j in 0..n {
                m.data.swap(k * n + j, p * n + j);
            }
            x.swap(k, p);
        }
        let pivot = m[(k, k)];
        for i in k + 1..n {
            let f = m[(i, k)] / pivot;
            if f == 0.0 {
                continue;
            }
            m[(i, k)] = 0.0;
            for j in k + 1..n {
                let v = m[(k, j)];
                m[(i, j)] -= f * v;
            }
            x[i] -= f * x[k];
        }
    }
    for i in (0..n).rev() {
        let s = x[i] - dot(&m.row(i)[i + 1..], &x[i + 1..]);
        x[i] = s / m[(i, i)];
    }
    Ok(x)
}
