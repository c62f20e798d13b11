//! Conditional VAE that maps shared-space audio embeddings to goal
//! embeddings in the target visual space.
//!
//! Encoder and decoder are two-hidden-layer MLPs (width 256) with layer
//! normalization after the first hidden layer. The condition is
//! concatenated onto the input of both. At inference the latent is drawn
//! from the standard normal prior, since the goal is unknown.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, NamedTensor};
use crate::clip::ClipAlignModel;
use crate::embedding::{EmbeddingMatrix, Modality, SHARED_DIM};
use crate::error::{Error, Result};
use crate::nn::{
    cosine, dot, leaky_relu, leaky_relu_backward, norm, AdamW, AdamWConfig, LayerNorm,
    LayerNormCache, LinearLayer, Matrix, Matrix2D, Parameters, Scalar, TensorView, LEAKY_SLOPE,
};

pub const PRIOR_HIDDEN: usize = 256;
pub const DEFAULT_LATENT_DIM: usize = 128;

/// Condition embeddings with their target goal embeddings, row-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorTrainPairs {
    condition: EmbeddingMatrix,
    target: EmbeddingMatrix,
}

impl PriorTrainPairs {
    pub fn new(condition: EmbeddingMatrix, target: EmbeddingMatrix) -> Result<Self> {
        if condition.rows() != target.rows() {
            return Err(Error::Dimension(format!(
                "{} conditions but {} targets",
                condition.rows(),
                target.rows()
            )));
        }
        Ok(PriorTrainPairs { condition, target })
    }

    pub fn condition(&self) -> &EmbeddingMatrix {
        &self.condition
    }

    pub fn target(&self) -> &EmbeddingMatrix {
        &self.target
    }

    pub fn len(&self) -> usize {
        self.condition.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        PriorTrainPairs {
            condition: self.condition.select_rows(idx),
            target: self.target.select_rows(idx),
        }
    }
}

/// `fc1 -> LayerNorm -> act -> fc2 -> act -> out`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorMlp<T> {
    pub fc1: LinearLayer<T>,
    pub norm: LayerNorm<T>,
    pub fc2: LinearLayer<T>,
    pub out: LinearLayer<T>,
}

#[derive(Debug, Clone)]
pub struct PriorMlpCache<T> {
    x: Matrix<T>,
    norm: LayerNormCache<T>,
    n1: Matrix<T>,
    a1: Matrix<T>,
    h2: Matrix<T>,
    a2: Matrix<T>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    /// Indices of hidden layers followed by layer normalization.
    pub layer_norm_after: Vec<usize>,
    pub output_dim: usize,
}

impl<T: Scalar> PriorMlp<T> {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        PriorMlp {
            fc1: LinearLayer::new(input, hidden, rng),
            norm: LayerNorm::new(hidden),
            fc2: LinearLayer::new(hidden, hidden, rng),
            out: LinearLayer::new(hidden, output, rng),
        }
    }

    pub fn architecture(&self) -> MlpArchitecture {
        MlpArchitecture {
            input_dim: self.fc1.input_dim(),
            hidden_dims: vec![self.fc1.output_dim(), self.fc2.output_dim()],
            layer_norm_after: vec![0],
            output_dim: self.out.output_dim(),
        }
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &Matrix<T>) -> Result<(Matrix<T>, PriorMlpCache<T>)> {
        let h1 = self.fc1.forward(x)?;
        let (n1, norm) = self.norm.forward(&h1)?;
        let a1 = leaky_relu(&n1, LEAKY_SLOPE);
        let h2 = self.fc2.forward(&a1)?;
        let a2 = leaky_relu(&h2, LEAKY_SLOPE);
        let y = self.out.forward(&a2)?;
        Ok((
            y,
            PriorMlpCache {
                x: x.clone(),
                norm,
                n1,
                a1,
                h2,
                a2,
            },
        ))
    }

    pub fn backward(&self, c: &PriorMlpCache<T>, grad_y: &Matrix<T>) -> Result<(Matrix<T>, Self)> {
        let (g_a2, g_out) = self.out.backward(&c.a2, grad_y)?;
        let g_h2 = leaky_relu_backward(&c.h2, &g_a2, LEAKY_SLOPE)?;
        let (g_a1, g_fc2) = self.fc2.backward(&c.a1, &g_h2)?;
        let g_n1 = leaky_relu_backward(&c.n1, &g_a1, LEAKY_SLOPE)?;
        let (g_h1, g_norm) = self.norm.backward(&c.norm, &g_n1)?;
        let (g_x, g_fc1) = self.fc1.backward(&c.x, &g_h1)?;
        Ok((
            g_x,
            PriorMlp {
                fc1: g_fc1,
                norm: g_norm,
                fc2: g_fc2,
                out: g_out,
            },
        ))
    }

    pub fn cast<U: Scalar>(&self) -> PriorMlp<U> {
        PriorMlp {
            fc1: self.fc1.cast(),
            norm: self.norm.cast(),
            fc2: self.fc2.cast(),
            out: self.out.cast(),
        }
    }

    fn named_params(&self, prefix: &str) -> Vec<TensorView<'_, T>> {
        let parts: [(&str, Vec<TensorView<'_, T>>); 4] = [
            ("fc1", self.fc1.params()),
            ("norm", self.norm.params()),
            ("fc2", self.fc2.params()),
            ("out", self.out.params()),
        ];
        parts
            .into_iter()
            .flat_map(|(name, ts)| {
                ts.into_iter().map(move |mut t| {
                    t.name = format!("{prefix}.{name}.{}", t.name);
                    t
                })
            })
            .collect()
    }
}

impl<T: Scalar> Parameters<T> for PriorMlp<T> {
    fn params(&self) -> Vec<TensorView<'_, T>> {
        self.named_params("mlp")
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut v = self.fc1.params_mut();
        v.extend(self.norm.params_mut());
        v.extend(self.fc2.params_mut());
        v.extend(self.out.params_mut());
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconLoss {
    /// Mean squared error over the target dimensions.
    Mse,
    /// `1 - cos(goal, goal_hat)`.
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboTerms {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvaePrior<T> {
    pub encoder: PriorMlp<T>,
    pub decoder: PriorMlp<T>,
    latent_dim: usize,
    condition_dim: usize,
    target_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvaeArchitecture {
    pub latent_dim: usize,
    pub condition_dim: usize,
    pub target_dim: usize,
    pub encoder: MlpArchitecture,
    pub decoder: MlpArchitecture,
    pub layer_norm_eps: f64,
    pub activation: String,
}

impl<T: Scalar> CvaePrior<T> {
    pub fn new<R: Rng + ?Sized>(
        condition_dim: usize,
        target_dim: usize,
        latent_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if condition_dim == 0 || target_dim == 0 || latent_dim == 0 || hidden == 0 {
            return Err(Error::Config("prior dims must be positive".into()));
        }
        Ok(CvaePrior {
            encoder: PriorMlp::new(target_dim + condition_dim, hidden, 2 * latent_dim, rng),
            decoder: PriorMlp::new(latent_dim + condition_dim, hidden, target_dim, rng),
            latent_dim,
            condition_dim,
            target_dim,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn condition_dim(&self) -> usize {
        self.condition_dim
    }

    pub fn target_dim(&self) -> usize {
        self.target_dim
    }

    pub fn architecture(&self) -> CvaeArchitecture {
        CvaeArchitecture {
            latent_dim: self.latent_dim,
            condition_dim: self.condition_dim,
            target_dim: self.target_dim,
            encoder: self.encoder.architecture(),
            decoder: self.decoder.architecture(),
            layer_norm_eps: self.encoder.norm.eps,
            activation: format!("leaky_relu({LEAKY_SLOPE})"),
        }
    }

    fn check(&self, what: &str, m: &Matrix<T>, dim: usize) -> Result<()> {
        if m.cols() != dim {
            return Err(Error::Dimension(format!(
                "{what} has dim {} but the prior expects {dim}",
                m.cols()
            )));
        }
        Ok(())
    }

    /// Posterior `(mu, log_var)` for each (goal, condition) row.
    pub fn encode(&self, goal: &Matrix<T>, condition: &Matrix<T>) -> Result<(Matrix<T>, Matrix<T>)> {
        self.check("goal", goal, self.target_dim)?;
        self.check("condition", condition, self.condition_dim)?;
        let h = self.encoder.forward(&goal.hcat(condition)?)?;
        Ok(h.hsplit(self.latent_dim))
    }

    pub fn decode(&self, z: &Matrix<T>, condition: &Matrix<T>) -> Result<Matrix<T>> {
        self.check("latent", z, self.latent_dim)?;
        self.check("condition", condition, self.condition_dim)?;
        self.decoder.forward(&z.hcat(condition)?)
    }

    /// ELBO terms on a batch and gradients for every parameter, using the
    /// supplied standard-normal `noise` for the reparameterization.
    pub fn loss_and_grads(
        &self,
        goal: &Matrix<T>,
        condition: &Matrix<T>,
        noise: &Matrix<T>,
        kl_beta: f64,
        recon: ReconLoss,
    ) -> Result<(ElboTerms, Self)> {
        self.check("goal", goal, self.target_dim)?;
        self.check("condition", condition, self.condition_dim)?;
        self.check("noise", noise, self.latent_dim)?;
        let n = goal.rows();
        if n == 0 || condition.rows() != n || noise.rows() != n {
            return Err(Error::Dimension(format!(
                "batch rows: goal {n}, condition {}, noise {}",
                condition.rows(),
                noise.rows()
            )));
        }
        let (h, enc_cache) = self.encoder.forward_cached(&goal.hcat(condition)?)?;
        let (mu, log_var) = h.hsplit(self.latent_dim);
        let z = reparameterize(&mu, &log_var, noise)?;
        let (goal_hat, dec_cache) = self.decoder.forward_cached(&z.hcat(condition)?)?;
        let terms = elbo_loss(goal, &goal_hat, &mu, &log_var, kl_beta, recon)?;

        let g_hat = recon_grad(goal, &goal_hat, recon);
        let (g_dec_in, dec_grads) = self.decoder.backward(&dec_cache, &g_hat)?;
        let (g_z, _) = g_dec_in.hsplit(self.latent_dim);
        let inv_n = 1.0 / n as f64;
        let mut g_h = Matrix::<T>::zeros(n, 2 * self.latent_dim);
        for i in 0..n {
            for j in 0..self.latent_dim {
                let m = mu[(i, j)].as_f64();
                let lv = log_var[(i, j)].as_f64();
                let gz = g_z[(i, j)].as_f64();
                let sigma = (0.5 * lv).exp();
                let g_mu = gz + kl_beta * m * inv_n;
                let g_lv = gz * noise[(i, j)].as_f64() * 0.5 * sigma
                    + kl_beta * 0.5 * (lv.exp() - 1.0) * inv_n;
                g_h[(i, j)] = T::from_f64(g_mu);
                g_h[(i, self.latent_dim + j)] = T::from_f64(g_lv);
            }
        }
        let (_, enc_grads) = self.encoder.backward(&enc_cache, &g_h)?;
        Ok((
            terms,
            CvaePrior {
                encoder: enc_grads,
                decoder: dec_grads,
                latent_dim: self.latent_dim,
                condition_dim: self.condition_dim,
                target_dim: self.target_dim,
            },
        ))
    }

    /// One goal per condition row; row `i` draws its latent from stream `i`
    /// of `seed`.
    pub fn sample_goals(&self, conditions: &Matrix<T>, seed: u64) -> Result<Matrix<T>> {
        self.check("condition", conditions, self.condition_dim)?;
        let mut z = Matrix::zeros(conditions.rows(), self.latent_dim);
        for i in 0..conditions.rows() {
            let mut rng = noise_rng(seed, i as u64);
            for v in z.row_mut(i) {
                *v = T::from_f64(rng.sample(StandardNormal));
            }
        }
        self.decode(&z, conditions)
    }

    /// `n_samples` goals for one condition; sample `k` uses stream `k`.
    pub fn sample_goal(&self, condition: &[T], seed: u64, n_samples: usize) -> Result<Matrix<T>> {
        let row = Matrix::from_vec(1, condition.len(), condition.to_vec())?;
        let idx = vec![0; n_samples];
        self.sample_goals(&row.select_rows(&idx), seed)
    }

    pub fn cast<U: Scalar>(&self) -> CvaePrior<U> {
        CvaePrior {
            encoder: self.encoder.cast(),
            decoder: self.decoder.cast(),
            latent_dim: self.latent_dim,
            condition_dim: self.condition_dim,
            target_dim: self.target_dim,
        }
    }
}

fn noise_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl<T: Scalar> Parameters<T> for CvaePrior<T> {
    fn params(&self) -> Vec<TensorView<'_, T>> {
        let mut v = self.encoder.named_params("encoder");
        v.extend(self.decoder.named_params("decoder"));
        v
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut v = self.encoder.params_mut();
        v.extend(self.decoder.params_mut());
        v
    }
}

impl CvaePrior<f32> {
    pub fn to_checkpoint(&self, step: u64) -> Result<Checkpoint> {
        Checkpoint::from_params(
            "cvae_prior",
            serde_json::to_value(self.architecture())?,
            step,
            self,
        )
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind("cvae_prior")?;
        let arch: CvaeArchitecture = serde_json::from_value(ckpt.architecture.clone())?;
        let mut it = ckpt.tensors.iter();
        let encoder = mlp_from_tensors("encoder", &arch.encoder, arch.layer_norm_eps, &mut it)?;
        let decoder = mlp_from_tensors("decoder", &arch.decoder, arch.layer_norm_eps, &mut it)?;
        if it.next().is_some() {
            return Err(Error::Format("unexpected extra tensors in prior checkpoint".into()));
        }
        if arch.encoder.input_dim != arch.target_dim + arch.condition_dim
            || arch.encoder.output_dim != 2 * arch.latent_dim
            || arch.decoder.input_dim != arch.latent_dim + arch.condition_dim
            || arch.decoder.output_dim != arch.target_dim
        {
            return Err(Error::Format("prior architecture dims are inconsistent".into()));
        }
        Ok(CvaePrior {
            encoder,
            decoder,
            latent_dim: arch.latent_dim,
            condition_dim: arch.condition_dim,
            target_dim: arch.target_dim,
        })
    }
}

fn mlp_from_tensors<'a>(
    prefix: &str,
    arch: &MlpArchitecture,
    eps: f64,
    it: &mut impl Iterator<Item = &'a NamedTensor>,
) -> Result<PriorMlp<f32>> {
    let mut next = |name: &str, shape: (usize, usize)| -> Result<Matrix2D> {
        let full = format!("{prefix}.{name}");
        let t = it
            .next()
            .filter(|t| t.name == full)
            .ok_or_else(|| Error::Format(format!("missing tensor {full}")))?;
        if t.value.shape() != shape {
            return Err(Error::Format(format!(
                "{full} has shape {:?}, expected {shape:?}",
                t.value.shape()
            )));
        }
        Ok(t.value.clone())
    };
    if arch.hidden_dims.len() != 2 {
        return Err(Error::Format(format!(
            "{prefix}: expected two hidden layers, found {}",
            arch.hidden_dims.len()
        )));
    }
    let (i, h1, h2, o) = (arch.input_dim, arch.hidden_dims[0], arch.hidden_dims[1], arch.output_dim);
    let fc1 = LinearLayer::from_parts(next("fc1.weight", (h1, i))?, next("fc1.bias", (1, h1))?.into_vec())?;
    let norm = LayerNorm {
        gamma: next("norm.gamma", (1, h1))?.into_vec(),
        beta: next("norm.beta", (1, h1))?.into_vec(),
        eps,
    };
    let fc2 = LinearLayer::from_parts(next("fc2.weight", (h2, h1))?, next("fc2.bias", (1, h2))?.into_vec())?;
    let out = LinearLayer::from_parts(next("out.weight", (o, h2))?, next("out.bias", (1, o))?.into_vec())?;
    Ok(PriorMlp { fc1, norm, fc2, out })
}

/// `z = mu + exp(0.5 log_var) * noise`.
pub fn reparameterize<T: Scalar>(mu: &Matrix<T>, log_var: &Matrix<T>, noise: &Matrix<T>) -> Result<Matrix<T>> {
    if mu.shape() != log_var.shape() || mu.shape() != noise.shape() {
        return Err(Error::Dimension(format!(
            "reparameterize: mu {:?}, log_var {:?}, noise {:?}",
            mu.shape(),
            log_var.shape(),
            noise.shape()
        )));
    }
    let data = mu
        .as_slice()
        .iter()
        .zip(log_var.as_slice())
        .zip(noise.as_slice())
        .map(|((&m, &lv), &e)| T::from_f64(m.as_f64() + (0.5 * lv.as_f64()).exp() * e.as_f64()))
        .collect();
    Matrix::from_vec(mu.rows(), mu.cols(), data)
}

/// Batch-mean ELBO terms: `recon` (per-sample MSE over target dims, or
/// `1 - cos`), `kl = -0.5 sum(1 + log_var - mu^2 - exp(log_var))`, and
/// `total = recon + kl_beta * kl`.
pub fn elbo_loss<T: Scalar>(
    goal: &Matrix<T>,
    goal_hat: &Matrix<T>,
    mu: &Matrix<T>,
    log_var: &Matrix<T>,
    kl_beta: f64,
    recon: ReconLoss,
) -> Result<ElboTerms> {
    if goal.shape() != goal_hat.shape() || mu.shape() != log_var.shape() || goal.rows() != mu.rows() {
        return Err(Error::Dimension(format!(
            "elbo: goal {:?}, goal_hat {:?}, mu {:?}, log_var {:?}",
            goal.shape(),
            goal_hat.shape(),
            mu.shape(),
            log_var.shape()
        )));
    }
    for (name, m) in [("goal", goal), ("goal_hat", goal_hat), ("mu", mu), ("log_var", log_var)] {
        if let Some((r, c)) = m.first_non_finite() {
            return Err(Error::InvalidInput(format!("{name} is not finite at ({r}, {c})")));
        }
    }
    let n = goal.rows().max(1) as f64;
    let rec: f64 = match recon {
        ReconLoss::Mse => {
            let d = goal.cols().max(1) as f64;
            goal.iter_rows()
                .zip(goal_hat.iter_rows())
                .map(|(g, h)| {
                    g.iter()
                        .zip(h)
                        .map(|(&a, &b)| (a.as_f64() - b.as_f64()).powi(2))
                        .sum::<f64>()
                        / d
                })
                .sum::<f64>()
        }
        ReconLoss::Cosine => goal
            .iter_rows()
            .zip(goal_hat.iter_rows())
            .map(|(g, h)| 1.0 - cosine(g, h))
            .sum(),
    } / n;
    let kl: f64 = mu
        .as_slice()
        .iter()
        .zip(log_var.as_slice())
        .map(|(&m, &lv)| {
            let (m, lv) = (m.as_f64(), lv.as_f64());
            // each term is lv.exp() - 1 - lv + m^2 >= 0, keep it that way numerically
            (lv.exp() - 1.0 - lv).max(0.0) + m * m
        })
        .sum::<f64>()
        * 0.5
        / n;
    Ok(ElboTerms {
        total: rec + kl_beta * kl,
        recon: rec,
        kl,
    })
}

fn recon_grad<T: Scalar>(goal: &Matrix<T>, goal_hat: &Matrix<T>, recon: ReconLoss) -> Matrix<T> {
    let n = goal.rows() as f64;
    let d = goal.cols() as f64;
    let mut g = Matrix::zeros(goal.rows(), goal.cols());
    for i in 0..goal.rows() {
        let y = goal.row(i);
        let h = goal_hat.row(i);
        let out = g.row_mut(i);
        match recon {
            ReconLoss::Mse => {
                for j in 0..y.len() {
                    out[j] = T::from_f64(2.0 * (h[j].as_f64() - y[j].as_f64()) / (d * n));
                }
            }
            ReconLoss::Cosine => {
                let ny = norm(y);
                let nh = norm(h);
                if ny == 0.0 || nh == 0.0 {
                    continue;
                }
                let c = dot(y, h) / (ny * nh);
                for j in 0..y.len() {
                    let dc = y[j].as_f64() / (ny * nh) - c * h[j].as_f64() / (nh * nh);
                    out[j] = T::from_f64(-dc / n);
                }
            }
        }
    }
    g
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
    pub seed: u64,
    pub latent_dim: usize,
    pub hidden_dim: usize,
    /// Weight of the KL term.
    pub kl_beta: f64,
    /// Fraction of all steps over which the KL weight ramps linearly from 0.
    pub kl_warmup_fraction: f64,
    pub recon: ReconLoss,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            batch_size: 256,
            lr: 0.001,
            epochs: 100,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.01,
            eps: 1e-8,
            seed: 0,
            latent_dim: DEFAULT_LATENT_DIM,
            hidden_dim: PRIOR_HIDDEN,
            kl_beta: 0.001,
            kl_warmup_fraction: 0.1,
            recon: ReconLoss::Mse,
        }
    }
}

impl PriorConfig {
    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            weight_decay: self.weight_decay,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.latent_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config(
                "batch_size, epochs, latent_dim and hidden_dim must be positive".into(),
            ));
        }
        if !(self.lr > 0.0) || !(self.eps > 0.0) {
            return Err(Error::Config("lr and eps must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.kl_beta >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("kl_beta and weight_decay must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.kl_warmup_fraction) {
            return Err(Error::Config("kl_warmup_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// KL weight at optimizer step `step` of `total` steps.
    pub fn kl_weight_at(&self, step: usize, total: usize) -> f64 {
        let warm = self.kl_warmup_fraction * total as f64;
        if warm <= 0.0 {
            self.kl_beta
        } else {
            self.kl_beta * (step as f64 / warm).min(1.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorLossRecord {
    pub epoch: usize,
    pub batch: usize,
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PriorHistory {
    pub records: Vec<PriorLossRecord>,
}

impl PriorHistory {
    pub fn steps(&self) -> usize {
        self.records.len()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,batch,loss,recon,kl\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{:e},{:e},{:e}\n",
                r.epoch, r.batch, r.total, r.recon, r.kl
            ));
        }
        out
    }
}

/// Fits a prior on `pairs`. Initialization, batch order and reparameterization
/// noise all derive from `config.seed`.
pub fn train_prior(pairs: &PriorTrainPairs, config: &PriorConfig) -> Result<(CvaePrior<f32>, PriorHistory)> {
    config.validate()?;
    let n = pairs.len();
    if n < config.batch_size {
        return Err(Error::InvalidInput(format!(
            "{n} pairs is fewer than one batch of {}",
            config.batch_size
        )));
    }
    let mut prior = CvaePrior::<f32>::new(
        pairs.condition().dim(),
        pairs.target().dim(),
        config.latent_dim,
        config.hidden_dim,
        &mut noise_rng(config.seed, 1),
    )?;
    let mut opt = AdamW::new(config.adamw());
    let mut shuffle = noise_rng(config.seed, 2);
    let mut noise_src = noise_rng(config.seed, 3);
    let batches = n / config.batch_size;
    let total_steps = batches * config.epochs;
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = PriorHistory::default();
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle);
        for b in 0..batches {
            let pick = &order[b * config.batch_size..(b + 1) * config.batch_size];
            let cond = pairs.condition().matrix().select_rows(pick);
            let goal = pairs.target().matrix().select_rows(pick);
            let noise = Matrix2D::randn(pick.len(), config.latent_dim, 1.0, &mut noise_src);
            let step = history.steps();
            let beta = config.kl_weight_at(step, total_steps);
            let (terms, grads) = prior.loss_and_grads(&goal, &cond, &noise, beta, config.recon)?;
            if !terms.total.is_finite() {
                return Err(Error::TrainingAborted {
                    step,
                    reason: format!("prior loss became {}", terms.total),
                });
            }
            opt.step(&mut prior, &grads)?;
            history.records.push(PriorLossRecord {
                epoch,
                batch: b,
                total: terms.total,
                recon: terms.recon,
                kl: terms.kl,
            });
        }
        if let Some(r) = history.records.last() {
            log::info!("prior epoch {epoch}: recon {:.5} kl {:.3}", r.recon, r.kl);
        }
    }
    if prior.flatten().iter().any(|v| !v.is_finite()) {
        return Err(Error::TrainingAborted {
            step: history.steps(),
            reason: "prior parameters are not finite".into(),
        });
    }
    Ok((prior, history))
}

/// Audio classifier logits to goal embeddings: shared-space projection,
/// then one prior sample per row (row `i` uses noise stream `i` of `seed`).
pub fn map_audio_to_goal(
    clip: &ClipAlignModel<f32>,
    prior: &CvaePrior<f32>,
    audio_logits: &Matrix2D,
    seed: u64,
) -> Result<EmbeddingMatrix> {
    if prior.condition_dim() != clip.shared_dim() {
        return Err(Error::Dimension(format!(
            "prior conditions on {}-d embeddings but the clip model emits {}-d",
            prior.condition_dim(),
            clip.shared_dim()
        )));
    }
    let shared = clip.project_audio(audio_logits)?;
    let goals = prior.sample_goals(&shared, seed)?;
    EmbeddingMatrix::from_matrix(Modality::Goal, goals)
}

/// Default widths of the prior's condition and target spaces.
pub const PRIOR_CONDITION_DIM: usize = SHARED_DIM;
