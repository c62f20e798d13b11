//! Dense row-major matrices and the GEMM kernel used by every layer.
//!
//! Everything is generic over [`Scalar`] so the same layer code runs in
//! `f32` for training and in `f64` for gradient checking.

use std::fmt::Debug;

use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Floating-point element type of a [`Matrix`].
pub trait Scalar: Float + Default + Debug + Send + Sync + 'static {
    /// `c = alpha * op(a) * op(b) + beta * c` on raw strided buffers.
    ///
    /// # Safety
    /// Pointers and strides must describe valid `m x k`, `k x n` and
    /// `m x n` buffers.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn from_f64(x: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    #[inline]
    fn from_f64(x: f64) -> f32 {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    #[inline]
    fn from_f64(x: f64) -> f64 {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Row-major `rows x cols` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

pub type Matrix2D = Matrix<f32>;

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "buffer of length {} cannot form a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::Dimension(format!(
                    "row {i} has length {} but row 0 has length {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    /// Entries drawn from `N(0, std^2)`.
    pub fn randn<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                T::from_f64(z * std)
            })
            .collect();
        Matrix { rows, cols, data }
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols;
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[T]> {
        // chunks_exact panics on zero chunk size
        let c = self.cols.max(1);
        self.data.chunks_exact(c).take(self.rows)
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Gathers the given rows into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Concatenates `self` and `other` column-wise.
    pub fn hcat(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::dims("hcat", self.shape(), other.shape()));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Ok(Matrix {
            rows: self.rows,
            cols,
            data,
        })
    }

    /// Splits columns at `at`, returning `(left, right)`.
    pub fn hsplit(&self, at: usize) -> (Self, Self) {
        assert!(at <= self.cols);
        let mut left = Self::zeros(self.rows, at);
        let mut right = Self::zeros(self.rows, self.cols - at);
        for i in 0..self.rows {
            let r = self.row(i);
            left.row_mut(i).copy_from_slice(&r[..at]);
            right.row_mut(i).copy_from_slice(&r[at..]);
        }
        (left, right)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| U::from_f64(x.as_f64())).collect(),
        }
    }

    /// Position of the first non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<(usize, usize)> {
        let c = self.cols.max(1);
        self.data
            .iter()
            .position(|x| !x.is_finite())
            .map(|p| (p / c, p % c))
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dims("add", self.shape(), other.shape()));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    /// Column sums accumulated in 64-bit.
    pub fn col_sums(&self) -> Vec<T> {
        let mut acc = vec![0.0f64; self.cols];
        for r in self.iter_rows() {
            for (a, &x) in acc.iter_mut().zip(r) {
                *a += x.as_f64();
            }
        }
        acc.into_iter().map(T::from_f64).collect()
    }

    /// `op(a) * op(b)` where `op` optionally transposes.
    pub fn matmul(a: &Self, trans_a: bool, b: &Self, trans_b: bool) -> Result<Self> {
        let (m, ka) = if trans_a {
            (a.cols, a.rows)
        } else {
            (a.rows, a.cols)
        };
        let (kb, n) = if trans_b {
            (b.cols, b.rows)
        } else {
            (b.rows, b.cols)
        };
        if ka != kb {
            return Err(Error::Dimension(format!(
                "matmul: {}x{}{} times {}x{}{}",
                a.rows,
                a.cols,
                if trans_a { "^T" } else { "" },
                b.rows,
                b.cols,
                if trans_b { "^T" } else { "" },
            )));
        }
        let mut c = Self::zeros(m, n);
        if m == 0 || n == 0 {
            return Ok(c);
        }
        if ka == 0 {
            return Ok(c);
        }
        let (rsa, csa) = if trans_a {
            (1, a.cols as isize)
        } else {
            (a.cols as isize, 1)
        };
        let (rsb, csb) = if trans_b {
            (1, b.cols as isize)
        } else {
            (b.cols as isize, 1)
        };
        // SAFETY: shapes and strides were validated above.
        unsafe {
            T::gemm_raw(
                m,
                ka,
                n,
                T::one(),
                a.data.as_ptr(),
                rsa,
                csa,
                b.data.as_ptr(),
                rsb,
                csb,
                T::zero(),
                c.data.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        Ok(c)
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// Dot product accumulated in 64-bit.
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x.as_f64() * y.as_f64()).sum()
}

pub fn norm<T: Scalar>(a: &[T]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; zero vectors give 0.
pub fn cosine<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    let d = norm(a) * norm(b);
    if d == 0.0 {
        0.0
    } else {
        dot(a, b) / d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
        let mut c = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a[(i, k)] * b[(k, j)];
                }
                c[(i, j)] = s;
            }
        }
        c
    }

    #[test]
    fn matmul_transposes_agree_with_naive() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let a = Matrix::<f64>::randn(4, 7, 1.0, &mut rng);
        let b = Matrix::<f64>::randn(7, 3, 1.0, &mut rng);
        let expected = naive(&a, &b);
        let cases = [
            Matrix::matmul(&a, false, &b, false).unwrap(),
            Matrix::matmul(&a.transpose(), true, &b, false).unwrap(),
            Matrix::matmul(&a, false, &b.transpose(), true).unwrap(),
            Matrix::matmul(&a.transpose(), true, &b.transpose(), true).unwrap(),
        ];
        for c in cases {
            for (x, y) in c.as_slice().iter().zip(expected.as_slice()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_rejects_bad_shapes() {
        let a = Matrix::<f32>::zeros(2, 3);
        let b = Matrix::<f32>::zeros(2, 3);
        let err = Matrix::matmul(&a, false, &b, false).unwrap_err();
        assert!(err.to_string().contains("2x3"));
    }

    #[test]
    fn hcat_then_hsplit() {
        let a = Matrix::<f32>::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::<f32>::from_rows(&[vec![5.0], vec![6.0]]).unwrap();
        let c = a.hcat(&b).unwrap();
        assert_eq!(c.row(1), &[3.0, 4.0, 6.0]);
        let (l, r) = c.hsplit(2);
        assert_eq!(l, a);
        assert_eq!(r, b);
    }

    #[test]
    fn cosine_of_zero_is_zero() {
        assert_eq!(cosine(&[0.0f32, 0.0], &[1.0, 0.0]), 0.0);
        assert!((cosine(&[1.0f32, 1.0], &[2.0, 2.0]) - 1.0).abs() < 1e-12);
    }
}
