//! Audio-video contrastive alignment head.
//!
//! Two [`MappingNetwork`]s lift frozen audio and video embeddings into a
//! shared space. Training maximises the cosine similarity of matching pairs
//! against every other pairing in the batch with a symmetric cross-entropy
//! over temperature-scaled similarity logits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, NamedTensor};
use crate::embedding::{EmbeddingMatrix, Modality, PairedDataset, Split, SHARED_DIM};
use crate::error::{Error, Result};
use crate::nn::{
    leaky_relu, leaky_relu_backward, normalize_rows, normalize_rows_backward, AdamW, AdamWConfig,
    LinearLayer, Matrix, Matrix2D, Parameters, Scalar, TensorView, LEAKY_SLOPE,
};

pub const MAPPING_LAYERS: usize = 10;
pub const MAPPING_HIDDEN: usize = 1024;
pub const INIT_TEMPERATURE: f64 = 0.07;
pub const MAX_LOGIT_SCALE: f64 = 100.0;

/// Deep leaky-ReLU MLP with no activation after the last layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingNetwork<T> {
    layers: Vec<LinearLayer<T>>,
    slope: f64,
}

/// Activations saved by [`MappingNetwork::forward_cached`].
#[derive(Debug, Clone)]
pub struct MappingCache<T> {
    /// Input to each layer.
    inputs: Vec<Matrix<T>>,
    /// Pre-activation output of every layer but the last.
    pre: Vec<Matrix<T>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingArchitecture {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    /// `(in, out)` of every linear layer in order.
    pub layers: Vec<(usize, usize)>,
    pub activation: String,
}

impl<T: Scalar> MappingNetwork<T> {
    pub fn new<R: rand::Rng + ?Sized>(
        input: usize,
        hidden: usize,
        output: usize,
        n_layers: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if n_layers == 0 || input == 0 || hidden == 0 || output == 0 {
            return Err(Error::Config(format!(
                "mapping network needs positive sizes, got {input}->{hidden}x{n_layers}->{output}"
            )));
        }
        let layers = (0..n_layers)
            .map(|l| {
                let i = if l == 0 { input } else { hidden };
                let o = if l + 1 == n_layers { output } else { hidden };
                LinearLayer::new(i, o, rng)
            })
            .collect();
        Ok(MappingNetwork {
            layers,
            slope: LEAKY_SLOPE,
        })
    }

    pub fn from_layers(layers: Vec<LinearLayer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("mapping network needs at least one layer".into()));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::Dimension(format!(
                    "layer {l} outputs {} but layer {} expects {}",
                    pair[0].output_dim(),
                    l + 1,
                    pair[1].input_dim()
                )));
            }
        }
        Ok(MappingNetwork {
            layers,
            slope: LEAKY_SLOPE,
        })
    }

    pub fn layers(&self) -> &[LinearLayer<T>] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn architecture(&self) -> MappingArchitecture {
        let hidden = if self.layers.len() > 1 {
            self.layers[0].output_dim()
        } else {
            0
        };
        MappingArchitecture {
            input_dim: self.input_dim(),
            hidden_dim: hidden,
            output_dim: self.output_dim(),
            layers: self
                .layers
                .iter()
                .map(|l| (l.input_dim(), l.output_dim()))
                .collect(),
            activation: format!("leaky_relu({})", self.slope),
        }
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        let mut h = self.layers[0].forward(x)?;
        for layer in &self.layers[1..] {
            h = layer.forward(&leaky_relu(&h, self.slope))?;
        }
        Ok(h)
    }

    pub fn forward_cached(&self, x: &Matrix<T>) -> Result<(Matrix<T>, MappingCache<T>)> {
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n - 1);
        let mut h = self.layers[0].forward(x)?;
        inputs.push(x.clone());
        for layer in &self.layers[1..] {
            let a = leaky_relu(&h, self.slope);
            pre.push(h);
            h = layer.forward(&a)?;
            inputs.push(a);
        }
        Ok((h, MappingCache { inputs, pre }))
    }

    /// Returns `(grad_x, grads)`.
    pub fn backward(&self, cache: &MappingCache<T>, grad_out: &Matrix<T>) -> Result<(Matrix<T>, Self)> {
        let n = self.layers.len();
        let mut grads = Vec::with_capacity(n);
        let mut g = grad_out.clone();
        for l in (0..n).rev() {
            let (gx, gl) = self.layers[l].backward(&cache.inputs[l], &g)?;
            grads.push(gl);
            g = if l > 0 {
                leaky_relu_backward(&cache.pre[l - 1], &gx, self.slope)?
            } else {
                gx
            };
        }
        grads.reverse();
        Ok((
            g,
            MappingNetwork {
                layers: grads,
                slope: self.slope,
            },
        ))
    }

    pub fn cast<U: Scalar>(&self) -> MappingNetwork<U> {
        MappingNetwork {
            layers: self.layers.iter().map(LinearLayer::cast).collect(),
            slope: self.slope,
        }
    }

    fn named_params(&self, prefix: &str) -> Vec<TensorView<'_, T>> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            for mut t in layer.params() {
                t.name = format!("{prefix}.layers.{l}.{}", t.name);
                out.push(t);
            }
        }
        out
    }
}

impl<T: Scalar> Parameters<T> for MappingNetwork<T> {
    fn params(&self) -> Vec<TensorView<'_, T>> {
        self.named_params("net")
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

/// The pair of mapping networks plus the learnable log-temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipAlignModel<T> {
    pub audio_net: MappingNetwork<T>,
    pub video_net: MappingNetwork<T>,
    /// `ln` of the multiplier applied to cosine similarities.
    pub logit_scale: T,
    pub max_logit_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipArchitecture {
    pub audio_net: MappingArchitecture,
    pub video_net: MappingArchitecture,
    pub max_logit_scale: f64,
}

impl<T: Scalar> ClipAlignModel<T> {
    /// Fresh model; the two networks draw from separate RNG streams of `seed`.
    pub fn new(
        audio_dim: usize,
        video_dim: usize,
        config: &TrainConfig,
    ) -> Result<Self> {
        let mut ra = ChaCha8Rng::seed_from_u64(config.seed);
        ra.set_stream(1);
        let mut rv = ChaCha8Rng::seed_from_u64(config.seed);
        rv.set_stream(2);
        let audio_net = MappingNetwork::new(
            audio_dim,
            config.hidden_dim,
            config.shared_dim,
            config.n_layers,
            &mut ra,
        )?;
        let video_net = MappingNetwork::new(
            video_dim,
            config.hidden_dim,
            config.shared_dim,
            config.n_layers,
            &mut rv,
        )?;
        Self::from_parts(
            audio_net,
            video_net,
            (1.0 / config.init_temperature).ln(),
            config.max_logit_scale,
        )
    }

    pub fn from_parts(
        audio_net: MappingNetwork<T>,
        video_net: MappingNetwork<T>,
        logit_scale: f64,
        max_logit_scale: f64,
    ) -> Result<Self> {
        if audio_net.output_dim() != video_net.output_dim() {
            return Err(Error::Dimension(format!(
                "audio net outputs {} but video net outputs {}",
                audio_net.output_dim(),
                video_net.output_dim()
            )));
        }
        if !(max_logit_scale > 0.0) {
            return Err(Error::Config(format!(
                "max_logit_scale must be positive, got {max_logit_scale}"
            )));
        }
        let mut m = ClipAlignModel {
            audio_net,
            video_net,
            logit_scale: T::from_f64(logit_scale),
            max_logit_scale,
        };
        m.clamp_logit_scale();
        Ok(m)
    }

    pub fn shared_dim(&self) -> usize {
        self.audio_net.output_dim()
    }

    /// `exp(logit_scale)`.
    pub fn scale(&self) -> f64 {
        self.logit_scale.as_f64().exp()
    }

    pub fn clamp_logit_scale(&mut self) {
        let cap = self.max_logit_scale.ln();
        if self.logit_scale.as_f64() > cap {
            self.logit_scale = T::from_f64(cap);
        }
    }

    pub fn architecture(&self) -> ClipArchitecture {
        ClipArchitecture {
            audio_net: self.audio_net.architecture(),
            video_net: self.video_net.architecture(),
            max_logit_scale: self.max_logit_scale,
        }
    }

    /// Unit-norm shared-space embeddings of audio inputs.
    pub fn project_audio(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        check_input("audio", x, self.audio_net.input_dim())?;
        Ok(normalize_rows(&self.audio_net.forward(x)?).0)
    }

    /// Unit-norm shared-space embeddings of video inputs.
    pub fn project_video(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        check_input("video", x, self.video_net.input_dim())?;
        Ok(normalize_rows(&self.video_net.forward(x)?).0)
    }

    /// `N x N` matrix of `exp(logit_scale) * cos(audio_i, video_j)`.
    pub fn similarity_logits(&self, audio: &Matrix<T>, video: &Matrix<T>) -> Result<Matrix<T>> {
        check_batch(audio, video)?;
        let a = self.project_audio(audio)?;
        let v = self.project_video(video)?;
        let scale = T::from_f64(self.scale());
        Ok(Matrix::matmul(&a, false, &v, true)?.map(|c| c * scale))
    }

    /// Contrastive loss on a batch and the gradient for every parameter.
    pub fn loss_and_grads(&self, audio: &Matrix<T>, video: &Matrix<T>) -> Result<(f64, Self)> {
        check_batch(audio, video)?;
        check_input("audio", audio, self.audio_net.input_dim())?;
        check_input("video", video, self.video_net.input_dim())?;
        let (ea, cache_a) = self.audio_net.forward_cached(audio)?;
        let (ev, cache_v) = self.video_net.forward_cached(video)?;
        let (na, norms_a) = normalize_rows(&ea);
        let (nv, norms_v) = normalize_rows(&ev);
        let cos = Matrix::matmul(&na, false, &nv, true)?;
        let scale = self.scale();
        let logits = cos.map(|c| T::from_f64(c.as_f64() * scale));
        let (loss, g_logits) = clip_loss_with_grad(&logits)?;

        // d logits / d logit_scale = logits
        let g_scale: f64 = g_logits
            .as_slice()
            .iter()
            .zip(logits.as_slice())
            .map(|(g, l)| g * l.as_f64())
            .sum();
        let g_cos = Matrix::from_vec(
            g_logits.rows(),
            g_logits.cols(),
            g_logits.as_slice().iter().map(|g| T::from_f64(g * scale)).collect(),
        )?;
        let g_na = Matrix::matmul(&g_cos, false, &nv, false)?;
        let g_nv = Matrix::matmul(&g_cos, true, &na, false)?;
        let g_ea = normalize_rows_backward(&na, &norms_a, &g_na)?;
        let g_ev = normalize_rows_backward(&nv, &norms_v, &g_nv)?;
        let (_, ga) = self.audio_net.backward(&cache_a, &g_ea)?;
        let (_, gv) = self.video_net.backward(&cache_v, &g_ev)?;
        Ok((
            loss,
            ClipAlignModel {
                audio_net: ga,
                video_net: gv,
                logit_scale: T::from_f64(g_scale),
                max_logit_scale: self.max_logit_scale,
            },
        ))
    }

    pub fn cast<U: Scalar>(&self) -> ClipAlignModel<U> {
        ClipAlignModel {
            audio_net: self.audio_net.cast(),
            video_net: self.video_net.cast(),
            logit_scale: U::from_f64(self.logit_scale.as_f64()),
            max_logit_scale: self.max_logit_scale,
        }
    }
}

impl<T: Scalar> Parameters<T> for ClipAlignModel<T> {
    fn params(&self) -> Vec<TensorView<'_, T>> {
        let mut out = self.audio_net.named_params("audio_net");
        out.extend(self.video_net.named_params("video_net"));
        out.push(TensorView {
            name: "logit_scale".into(),
            shape: (1, 1),
            data: std::slice::from_ref(&self.logit_scale),
        });
        out
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = self.audio_net.params_mut();
        out.extend(self.video_net.params_mut());
        out.push(std::slice::from_mut(&mut self.logit_scale));
        out
    }
}

impl ClipAlignModel<f32> {
    pub fn to_checkpoint(&self, step: u64) -> Result<Checkpoint> {
        Checkpoint::from_params(
            "clip_align",
            serde_json::to_value(self.architecture())?,
            step,
            self,
        )
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind("clip_align")?;
        let arch: ClipArchitecture = serde_json::from_value(ckpt.architecture.clone())?;
        let mut tensors = ckpt.tensors.iter();
        let audio_net = mapping_from_tensors(&arch.audio_net, "audio_net", &mut tensors)?;
        let video_net = mapping_from_tensors(&arch.video_net, "video_net", &mut tensors)?;
        let ls = tensors
            .next()
            .filter(|t| t.name == "logit_scale" && t.value.shape() == (1, 1))
            .ok_or_else(|| Error::Format("checkpoint lacks a 1x1 logit_scale tensor".into()))?;
        if tensors.next().is_some() {
            return Err(Error::Format("unexpected extra tensors in clip checkpoint".into()));
        }
        let mut m = ClipAlignModel::from_parts(audio_net, video_net, 0.0, arch.max_logit_scale)?;
        // bypass from_parts' conversion so the stored bits are kept exactly
        m.logit_scale = ls.value.as_slice()[0];
        Ok(m)
    }

    /// Projects an audio embedding matrix into the shared space.
    pub fn embed_audio(&self, m: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        EmbeddingMatrix::from_matrix(Modality::Shared, self.project_audio(m.matrix())?)
    }

    pub fn embed_video(&self, m: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        EmbeddingMatrix::from_matrix(Modality::Shared, self.project_video(m.matrix())?)
    }
}

fn mapping_from_tensors<'a>(
    arch: &MappingArchitecture,
    prefix: &str,
    tensors: &mut impl Iterator<Item = &'a NamedTensor>,
) -> Result<MappingNetwork<f32>> {
    let mut layers = Vec::with_capacity(arch.layers.len());
    for (l, &(i, o)) in arch.layers.iter().enumerate() {
        let w = tensors
            .next()
            .filter(|t| t.name == format!("{prefix}.layers.{l}.weight"))
            .ok_or_else(|| Error::Format(format!("missing {prefix}.layers.{l}.weight")))?;
        let b = tensors
            .next()
            .filter(|t| t.name == format!("{prefix}.layers.{l}.bias"))
            .ok_or_else(|| Error::Format(format!("missing {prefix}.layers.{l}.bias")))?;
        if w.value.shape() != (o, i) || b.value.shape() != (1, o) {
            return Err(Error::Format(format!(
                "{prefix} layer {l}: tensors {:?}/{:?} disagree with declared ({i}, {o})",
                w.value.shape(),
                b.value.shape()
            )));
        }
        layers.push(LinearLayer::from_parts(w.value.clone(), b.value.as_slice().to_vec())?);
    }
    MappingNetwork::from_layers(layers)
}

fn check_input<T: Scalar>(which: &str, x: &Matrix<T>, dim: usize) -> Result<()> {
    if x.cols() != dim {
        return Err(Error::Dimension(format!(
            "{which} input has dim {} but the network expects {dim}",
            x.cols()
        )));
    }
    Ok(())
}

fn check_batch<T: Scalar>(audio: &Matrix<T>, video: &Matrix<T>) -> Result<()> {
    if audio.rows() != video.rows() {
        return Err(Error::Dimension(format!(
            "audio batch has {} rows, video batch has {}",
            audio.rows(),
            video.rows()
        )));
    }
    if audio.rows() < 2 {
        return Err(Error::InvalidInput(
            "contrastive batches need at least 2 pairs".into(),
        ));
    }
    Ok(())
}

/// Symmetric cross-entropy over an `N x N` logit matrix whose diagonal
/// holds the matching pairs.
pub fn clip_loss<T: Scalar>(logits: &Matrix<T>) -> Result<f64> {
    clip_loss_with_grad(logits).map(|(l, _)| l)
}

/// [`clip_loss`] together with its gradient (row-major, `N x N`).
pub fn clip_loss_with_grad<T: Scalar>(logits: &Matrix<T>) -> Result<(f64, Matrix<f64>)> {
    let n = logits.rows();
    if n != logits.cols() {
        return Err(Error::Dimension(format!(
            "logits must be square, got {}x{}",
            n,
            logits.cols()
        )));
    }
    if n < 2 {
        return Err(Error::InvalidInput("contrastive loss needs N >= 2".into()));
    }
    if let Some((r, c)) = logits.first_non_finite() {
        return Err(Error::InvalidInput(format!(
            "non-finite logit at ({r}, {c})"
        )));
    }
    let l: Matrix<f64> = logits.cast();
    let mut grad = Matrix::<f64>::zeros(n, n);
    let w = 0.5 / n as f64;
    let mut row_ce = 0.0;
    for i in 0..n {
        let r = l.row(i);
        let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = r.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        row_ce += lse - r[i];
        for j in 0..n {
            grad[(i, j)] += w * (r[j] - lse).exp();
        }
        grad[(i, i)] -= w;
    }
    let mut col_ce = 0.0;
    for j in 0..n {
        let max = (0..n).map(|i| l[(i, j)]).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = (0..n).map(|i| (l[(i, j)] - max).exp()).sum();
        let lse = max + sum.ln();
        col_ce += lse - l[(j, j)];
        for i in 0..n {
            grad[(i, j)] += w * (l[(i, j)] - lse).exp();
        }
        grad[(j, j)] -= w;
    }
    let loss = 0.5 * (row_ce / n as f64 + col_ce / n as f64);
    Ok((loss, grad))
}

/// Hyperparameters for contrastive training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
    pub seed: u64,
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub shared_dim: usize,
    pub init_temperature: f64,
    pub max_logit_scale: f64,
    pub learnable_temperature: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 1024,
            lr: 0.001,
            epochs: 100,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.01,
            eps: 1e-8,
            seed: 0,
            n_layers: MAPPING_LAYERS,
            hidden_dim: MAPPING_HIDDEN,
            shared_dim: SHARED_DIM,
            init_temperature: INIT_TEMPERATURE,
            max_logit_scale: MAX_LOGIT_SCALE,
            learnable_temperature: true,
        }
    }
}

impl TrainConfig {
    /// Reduced batch and epoch counts that finish on a single CPU core.
    ///
    /// The full-width networks diverge at `lr = 1e-3` with batch 256, so the
    /// preset also lowers the (still constant) learning rate.
    pub fn desk() -> Self {
        TrainConfig {
            batch_size: 256,
            epochs: 30,
            lr: 1e-4,
            ..Default::default()
        }
    }

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
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be at least 2, got {}",
                self.batch_size
            )));
        }
        let rates = [
            ("lr", self.lr),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("eps", self.eps),
            ("init_temperature", self.init_temperature),
            ("max_logit_scale", self.max_logit_scale),
        ];
        for (name, v) in rates {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.beta1 >= 1.0 || self.beta2 >= 1.0 {
            return Err(Error::Config("Adam betas must be below 1".into()));
        }
        if self.epochs == 0 || self.n_layers == 0 || self.hidden_dim == 0 || self.shared_dim == 0 {
            return Err(Error::Config(
                "epochs, n_layers, hidden_dim and shared_dim must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
}

/// Per-batch training losses in step order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossHistory {
    pub records: Vec<LossRecord>,
}

impl LossHistory {
    pub fn steps(&self) -> usize {
        self.records.len()
    }

    /// Mean loss of each epoch.
    pub fn epoch_means(&self) -> Vec<f64> {
        let mut sums: Vec<(f64, usize)> = Vec::new();
        for r in &self.records {
            if sums.len() <= r.epoch {
                sums.resize(r.epoch + 1, (0.0, 0));
            }
            sums[r.epoch].0 += r.loss;
            sums[r.epoch].1 += 1;
        }
        sums.into_iter()
            .map(|(s, n)| if n == 0 { f64::NAN } else { s / n as f64 })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,batch,loss\n");
        for r in &self.records {
            out.push_str(&format!("{},{},{:e}\n", r.epoch, r.batch, r.loss));
        }
        out
    }
}

/// Gathers row-aligned batches for a list of pair indices.
pub(crate) fn gather(m: &Matrix2D, rows: &[usize], pick: &[usize]) -> Matrix2D {
    let idx: Vec<usize> = pick.iter().map(|&p| rows[p]).collect();
    m.select_rows(&idx)
}

/// Trains both mapping networks on the train split of `dataset`.
///
/// The final incomplete batch of every epoch is dropped. Parameter
/// initialization and batch order derive from `config.seed` only.
pub fn train_clip(
    dataset: &PairedDataset,
    config: &TrainConfig,
) -> Result<(ClipAlignModel<f32>, LossHistory)> {
    config.validate()?;
    let (audio_rows, video_rows) = dataset.rows_in(Split::Train);
    let n = audio_rows.len();
    if n < config.batch_size {
        return Err(Error::InvalidInput(format!(
            "train split has {n} pairs, fewer than one batch of {}",
            config.batch_size
        )));
    }
    let mut model =
        ClipAlignModel::<f32>::new(dataset.audio().dim(), dataset.video().dim(), config)?;
    let mut opt = AdamW::new(config.adamw());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(3);
    let a_all = dataset.audio().matrix();
    let v_all = dataset.video().matrix();
    let batches = n / config.batch_size;
    let mut history = LossHistory::default();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        for b in 0..batches {
            let pick = &order[b * config.batch_size..(b + 1) * config.batch_size];
            let audio = gather(a_all, &audio_rows, pick);
            let video = gather(v_all, &video_rows, pick);
            let (loss, mut grads) = model.loss_and_grads(&audio, &video)?;
            let step = history.steps();
            if !loss.is_finite() {
                return Err(Error::TrainingAborted {
                    step,
                    reason: format!("loss became {loss}"),
                });
            }
            if !config.learnable_temperature {
                grads.logit_scale = 0.0;
            }
            opt.step(&mut model, &grads)?;
            if !config.learnable_temperature {
                model.logit_scale = ClipAlignModel::<f32>::new_scale(config);
            }
            model.clamp_logit_scale();
            history.records.push(LossRecord {
                epoch,
                batch: b,
                loss,
            });
            log::debug!("epoch {epoch} batch {b} loss {loss:.5}");
        }
        if let Some(m) = history.epoch_means().last() {
            log::info!("epoch {epoch}: mean loss {m:.5}");
        }
    }
    if let Some((row, col)) = model
        .params()
        .iter()
        .find_map(|t| t.data.iter().position(|v| !v.is_finite()).map(|p| (p, t.name.clone())))
    {
        return Err(Error::TrainingAborted {
            step: history.steps(),
            reason: format!("parameter {col}[{row}] is not finite"),
        });
    }
    Ok((model, history))
}

impl ClipAlignModel<f32> {
    fn new_scale(config: &TrainConfig) -> f32 {
        (1.0 / config.init_temperature).ln() as f32
    }
}
