//! Minimal dense network toolkit with explicit forward and backward passes.

pub mod adamw;
pub mod gradcheck;
pub mod layers;
pub mod matrix;

pub use adamw::{AdamW, AdamWConfig};
pub use gradcheck::{grad_check, grad_check_at, GradCheckReport};
pub use layers::{
    leaky_relu, leaky_relu_backward, LayerNorm, LayerNormCache, LinearLayer, Parameters,
    TensorView, LEAKY_SLOPE,
};
pub use matrix::{cosine, dot, norm, Matrix, Matrix2D, Scalar};

use crate::error::Result;

/// Row-wise L2 normalization. Returns the normalized rows and their norms;
/// zero rows pass through unchanged.
pub fn normalize_rows<T: Scalar>(x: &Matrix<T>) -> (Matrix<T>, Vec<f64>) {
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let n = norm(x.row(i));
        norms.push(n);
        if n > 0.0 {
            for v in out.row_mut(i) {
                *v = T::from_f64(v.as_f64() / n);
            }
        }
    }
    (out, norms)
}

/// Backward of [`normalize_rows`]: `dx = (dy - y (y . dy)) / |x|`.
pub fn normalize_rows_backward<T: Scalar>(
    y: &Matrix<T>,
    norms: &[f64],
    grad_y: &Matrix<T>,
) -> Result<Matrix<T>> {
    if y.shape() != grad_y.shape() {
        return Err(crate::Error::dims("normalize backward", y.shape(), grad_y.shape()));
    }
    let mut gx = Matrix::zeros(y.rows(), y.cols());
    for i in 0..y.rows() {
        let n = norms[i];
        if n == 0.0 {
            continue;
        }
        let yr = y.row(i);
        let gr = grad_y.row(i);
        let proj = dot(yr, gr);
        for (o, (&yv, &gv)) in gx.row_mut(i).iter_mut().zip(yr.iter().zip(gr)) {
            *o = T::from_f64((gv.as_f64() - yv.as_f64() * proj) / n);
        }
    }
    Ok(gx)
}
