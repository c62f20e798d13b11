use rand::Rng;

use super::matrix::{Matrix, Scalar};
use crate::error::{Error, Result};

/// Leaky-ReLU negative slope used throughout.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Borrowed view of one named parameter tensor.
#[derive(Debug, Clone)]
pub struct TensorView<'a, T> {
    pub name: String,
    pub shape: (usize, usize),
    pub data: &'a [T],
}

/// Anything that owns trainable tensors in a fixed order.
///
/// `params` and `params_mut` must enumerate the same tensors in the same
/// order; gradient structs reuse the parameter type so they line up.
pub trait Parameters<T: Scalar> {
    fn params(&self) -> Vec<TensorView<'_, T>>;

    fn params_mut(&mut self) -> Vec<&mut [T]>;

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.data.len()).sum()
    }

    /// All parameters flattened in enumeration order.
    fn flatten(&self) -> Vec<T> {
        self.params()
            .iter()
            .flat_map(|p| p.data.iter().copied())
            .collect()
    }

    /// Inverse of [`Parameters::flatten`].
    fn load_flat(&mut self, flat: &[T]) -> Result<()> {
        let total: usize = self.params_mut().iter().map(|p| p.len()).sum();
        if total != flat.len() {
            return Err(Error::Dimension(format!(
                "flat parameter vector has {} entries, model has {total}",
                flat.len()
            )));
        }
        let mut off = 0;
        for p in self.params_mut() {
            p.copy_from_slice(&flat[off..off + p.len()]);
            off += p.len();
        }
        Ok(())
    }
}

/// Fully connected layer computing `y = x W^T + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer<T> {
    /// `out x in`
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> LinearLayer<T> {
    /// Weights from `N(0, 1/fan_in)`, zero biases.
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let std = 1.0 / (input.max(1) as f64).sqrt();
        LinearLayer {
            weight: Matrix::randn(output, input, std, rng),
            bias: vec![T::zero(); output],
        }
    }

    pub fn from_parts(weight: Matrix<T>, bias: Vec<T>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::Dimension(format!(
                "bias of length {} for weight {}x{}",
                bias.len(),
                weight.rows(),
                weight.cols()
            )));
        }
        Ok(LinearLayer { weight, bias })
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        LinearLayer {
            weight: Matrix::zeros(output, input),
            bias: vec![T::zero(); output],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        if x.cols() != self.input_dim() {
            return Err(Error::dims(
                "linear input vs weight",
                x.shape(),
                self.weight.shape(),
            ));
        }
        let mut y = Matrix::matmul(x, false, &self.weight, true)?;
        for i in 0..y.rows() {
            for (v, &b) in y.row_mut(i).iter_mut().zip(&self.bias) {
                *v = *v + b;
            }
        }
        Ok(y)
    }

    /// Returns `(grad_x, grads)` where `grads` holds `dW` and `db`.
    pub fn backward(&self, x: &Matrix<T>, grad_out: &Matrix<T>) -> Result<(Matrix<T>, Self)> {
        if x.cols() != self.input_dim() || grad_out.cols() != self.output_dim() {
            return Err(Error::Dimension(format!(
                "linear backward: x {}x{}, grad_out {}x{}, weight {}x{}",
                x.rows(),
                x.cols(),
                grad_out.rows(),
                grad_out.cols(),
                self.weight.rows(),
                self.weight.cols()
            )));
        }
        if x.rows() != grad_out.rows() {
            return Err(Error::dims("linear backward batch", x.shape(), grad_out.shape()));
        }
        let grad_x = Matrix::matmul(grad_out, false, &self.weight, false)?;
        let grad_w = Matrix::matmul(grad_out, true, x, false)?;
        let grad_b = grad_out.col_sums();
        Ok((
            grad_x,
            LinearLayer {
                weight: grad_w,
                bias: grad_b,
            },
        ))
    }

    pub fn cast<U: Scalar>(&self) -> LinearLayer<U> {
        LinearLayer {
            weight: self.weight.cast(),
            bias: self.bias.iter().map(|b| U::from_f64(b.as_f64())).collect(),
        }
    }
}

impl<T: Scalar> Parameters<T> for LinearLayer<T> {
    fn params(&self) -> Vec<TensorView<'_, T>> {
        vec![
            TensorView {
                name: "weight".into(),
                shape: self.weight.shape(),
                data: self.weight.as_slice(),
            },
            TensorView {
                name: "bias".into(),
                shape: (1, self.bias.len()),
                data: &self.bias,
            },
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        vec![self.weight.as_mut_slice(), &mut self.bias]
    }
}

#[inline]
pub fn leaky_relu_scalar(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

#[inline]
pub fn leaky_relu_grad_scalar(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        slope
    }
}

pub fn leaky_relu<T: Scalar>(x: &Matrix<T>, slope: f64) -> Matrix<T> {
    let s = T::from_f64(slope);
    x.map(|v| if v >= T::zero() { v } else { s * v })
}

/// Gradient through leaky-ReLU given the pre-activation input.
pub fn leaky_relu_backward<T: Scalar>(
    pre: &Matrix<T>,
    grad_out: &Matrix<T>,
    slope: f64,
) -> Result<Matrix<T>> {
    if pre.shape() != grad_out.shape() {
        return Err(Error::dims("leaky_relu backward", pre.shape(), grad_out.shape()));
    }
    let s = T::from_f64(slope);
    let data = pre
        .as_slice()
        .iter()
        .zip(grad_out.as_slice())
        .map(|(&p, &g)| if p >= T::zero() { g } else { s * g })
        .collect();
    Matrix::from_vec(pre.rows(), pre.cols(), data)
}

/// Per-row layer normalization with learnable affine parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub eps: f64,
}

/// Saved activations for [`LayerNorm::backward`].
#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    x_hat: Matrix<T>,
    inv_std: Vec<f64>,
}

impl<T: Scalar> LayerNorm<T> {
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gamma: vec![T::one(); dim],
            beta: vec![T::zero(); dim],
            eps: Self::DEFAULT_EPS,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<(Matrix<T>, LayerNormCache<T>)> {
        let d = self.dim();
        if x.cols() != d {
            return Err(Error::dims("layer norm input vs params", x.shape(), (1, d)));
        }
        let mut x_hat = Matrix::zeros(x.rows(), d);
        let mut y = Matrix::zeros(x.rows(), d);
        let mut inv_std = Vec::with_capacity(x.rows());
        for i in 0..x.rows() {
            let row = x.row(i);
            let mean = row.iter().map(|v| v.as_f64()).sum::<f64>() / d as f64;
            let var = row
                .iter()
                .map(|v| {
                    let c = v.as_f64() - mean;
                    c * c
                })
                .sum::<f64>()
                / d as f64;
            let istd = 1.0 / (var + self.eps).sqrt();
            inv_std.push(istd);
            for j in 0..d {
                let h = (row[j].as_f64() - mean) * istd;
                x_hat[(i, j)] = T::from_f64(h);
                y[(i, j)] = T::from_f64(self.gamma[j].as_f64() * h + self.beta[j].as_f64());
            }
        }
        Ok((y, LayerNormCache { x_hat, inv_std }))
    }

    /// Returns `(grad_x, grads)` with `grads.gamma`/`grads.beta` filled in.
    pub fn backward(
        &self,
        cache: &LayerNormCache<T>,
        grad_out: &Matrix<T>,
    ) -> Result<(Matrix<T>, Self)> {
        let d = self.dim();
        if grad_out.shape() != cache.x_hat.shape() {
            return Err(Error::dims(
                "layer norm backward",
                grad_out.shape(),
                cache.x_hat.shape(),
            ));
        }
        let mut grad_x = Matrix::zeros(grad_out.rows(), d);
        let mut g_gamma = vec![0.0f64; d];
        let mut g_beta = vec![0.0f64; d];
        let mut gxh = vec![0.0f64; d];
        for i in 0..grad_out.rows() {
            let gy = grad_out.row(i);
            let xh = cache.x_hat.row(i);
            let mut mean_g = 0.0;
            let mut mean_gx = 0.0;
            for j in 0..d {
                let g = gy[j].as_f64();
                let h = xh[j].as_f64();
                g_gamma[j] += g * h;
                g_beta[j] += g;
                gxh[j] = g * self.gamma[j].as_f64();
                mean_g += gxh[j];
                mean_gx += gxh[j] * h;
            }
            mean_g /= d as f64;
            mean_gx /= d as f64;
            let istd = cache.inv_std[i];
            let out = grad_x.row_mut(i);
            for j in 0..d {
                out[j] = T::from_f64(istd * (gxh[j] - mean_g - xh[j].as_f64() * mean_gx));
            }
        }
        Ok((
            grad_x,
            LayerNorm {
                gamma: g_gamma.into_iter().map(T::from_f64).collect(),
                beta: g_beta.into_iter().map(T::from_f64).collect(),
                eps: self.eps,
            },
        ))
    }

    pub fn cast<U: Scalar>(&self) -> LayerNorm<U> {
        LayerNorm {
            gamma: self.gamma.iter().map(|v| U::from_f64(v.as_f64())).collect(),
            beta: self.beta.iter().map(|v| U::from_f64(v.as_f64())).collect(),
            eps: self.eps,
        }
    }
}

impl<T: Scalar> Parameters<T> for LayerNorm<T> {
    fn params(&self) -> Vec<TensorView<'_, T>> {
        vec![
            TensorView {
                name: "gamma".into(),
                shape: (1, self.gamma.len()),
                data: &self.gamma,
            },
            TensorView {
                name: "beta".into(),
                shape: (1, self.beta.len()),
                data: &self.beta,
            },
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        vec![&mut self.gamma, &mut self.beta]
    }
}
