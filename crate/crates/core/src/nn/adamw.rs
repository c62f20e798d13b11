//! Adam with decoupled weight decay.
//!
//! Each step first shrinks every parameter by `lr * weight_decay * p`, then
//! applies the bias-corrected Adam update:
//!
//! ```text
//! m = b1 m + (1 - b1) g
//! v = b2 v + (1 - b2) g^2
//! p -= lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
//! ```

use serde::{Deserialize, Serialize};

use super::layers::Parameters;
use super::matrix::Scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.01,
            eps: 1e-8,
        }
    }
}

/// Optimizer state: moment buffers for each parameter tensor and the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW {
            config,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn second_moments(&self) -> impl Iterator<Item = &T> {
        self.v.iter().flatten()
    }

    /// One update of `params` using `grads` of identical structure.
    pub fn step<P: Parameters<T>>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let g = grads.params();
        let g: Vec<&[T]> = g.iter().map(|t| t.data).collect();
        self.step_slices(params.params_mut(), &g)
    }

    pub fn step_slices(&mut self, mut params: Vec<&mut [T]>, grads: &[&[T]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Dimension(format!(
                "{} parameter tensors but {} gradient tensors",
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() {
                return Err(Error::Dimension(format!(
                    "tensor {i}: parameter length {} vs gradient length {}",
                    p.len(),
                    g.len()
                )));
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len()
            || self.m.iter().zip(&params).any(|(m, p)| m.len() != p.len())
        {
            return Err(Error::Dimension(
                "parameter shapes changed between optimizer steps".into(),
            ));
        }

        self.t += 1;
        let c = self.config;
        let t = self.t as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let decay = c.lr * c.weight_decay;
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for j in 0..p.len() {
                let gj = g[j].as_f64();
                let mut pj = p[j].as_f64();
                pj -= decay * pj;
                let mj = c.beta1 * m[j].as_f64() + (1.0 - c.beta1) * gj;
                let vj = c.beta2 * v[j].as_f64() + (1.0 - c.beta2) * gj * gj;
                m[j] = T::from_f64(mj);
                v[j] = T::from_f64(vj);
                let m_hat = mj / bc1;
                let v_hat = vj / bc2;
                pj -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
                p[j] = T::from_f64(pj);
            }
        }
        Ok(())
    }
}
