//! Paired embedding datasets with known ground-truth correspondence.
//!
//! Both modalities are frozen random nonlinear functions of a shared
//! Gaussian latent, so a perfectly aligned model exists by construction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedding::{
    split_pairs, EmbeddingMatrix, Modality, PairManifest, PairedDataset, AUDIO_DIM, VIDEO_DIM,
};
use crate::error::{Error, Result};
use crate::nn::{LinearLayer, Matrix, Parameters};
use crate::prior::PriorTrainPairs;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n_pairs: usize,
    pub latent_dim: usize,
    pub audio_dim: usize,
    pub video_dim: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Frozen layers in each modality's generating map.
    pub map_depth: usize,
    /// Fraction of pairs assigned to the test split.
    pub test_fraction: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_pairs: 2000,
            latent_dim: 32,
            audio_dim: AUDIO_DIM,
            video_dim: VIDEO_DIM,
            noise_sigma: 0.0,
            seed: 0,
            map_depth: 2,
            test_fraction: 0.1,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.audio_dim == 0 || self.video_dim == 0 || self.map_depth == 0 {
            return Err(Error::Config(
                "latent_dim, audio_dim, video_dim and map_depth must be positive".into(),
            ));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::Config(format!(
                "noise_sigma must be a non-negative number, got {}",
                self.noise_sigma
            )));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::Config(format!(
                "test_fraction must lie in [0, 1), got {}",
                self.test_fraction
            )));
        }
        Ok(())
    }
}

/// A frozen random map: `tanh` after every layer except the last, which is
/// a bias-free linear readout.
#[derive(Debug, Clone)]
pub struct FrozenMap {
    layers: Vec<LinearLayer<f64>>,
}

impl FrozenMap {
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, depth: usize, rng: &mut R) -> Self {
        let layers = (0..depth)
            .map(|l| {
                let i = if l == 0 { input } else { output };
                let mut layer = LinearLayer::new(i, output, rng);
                if l + 1 < depth {
                    for b in layer.params_mut().pop().unwrap() {
                        *b = 0.5 * rng.sample::<f64, _>(StandardNormal);
                    }
                }
                layer
            })
            .collect();
        FrozenMap { layers }
    }

    pub fn apply(&self, x: &Matrix<f64>) -> Result<Matrix<f64>> {
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            if l < last {
                h = h.map(f64::tanh);
            }
        }
        Ok(h)
    }
}

fn stream(seed: u64, s: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s);
    rng
}

fn add_noise(m: &mut Matrix<f64>, sigma: f64, rng: &mut ChaCha8Rng) {
    if sigma > 0.0 {
        for v in m.as_mut_slice() {
            *v += sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

fn to_embeddings(modality: Modality, m: &Matrix<f64>) -> Result<EmbeddingMatrix> {
    crate::embedding::from_f64_matrix(modality, m)
}

/// Draws `n_pairs` latents and renders both modalities from them.
///
/// Row `i` of the audio matrix pairs with row `i` of the video matrix.
pub fn generate(spec: &SyntheticSpec) -> Result<PairedDataset> {
    spec.validate()?;
    let z = Matrix::<f64>::randn(spec.n_pairs, spec.latent_dim, 1.0, &mut stream(spec.seed, 0));
    let fa = FrozenMap::new(spec.latent_dim, spec.audio_dim, spec.map_depth, &mut stream(spec.seed, 1));
    let fv = FrozenMap::new(spec.latent_dim, spec.video_dim, spec.map_depth, &mut stream(spec.seed, 2));
    let mut noise = stream(spec.seed, 3);
    let mut audio = fa.apply(&z)?;
    let mut video = fv.apply(&z)?;
    add_noise(&mut audio, spec.noise_sigma, &mut noise);
    add_noise(&mut video, spec.noise_sigma, &mut noise);
    let ds = PairedDataset::new(
        to_embeddings(Modality::Audio, &audio)?,
        to_embeddings(Modality::Video, &video)?,
        PairManifest::aligned("synthetic", spec.n_pairs),
    )?;
    if spec.n_pairs == 0 {
        return Ok(ds);
    }
    split_pairs(&ds, spec.test_fraction, spec.seed)
}

/// Re-pairs every audio row with a different video row.
///
/// The permutation is a single random cycle (Sattolo's algorithm), which
/// has no fixed points.
pub fn shuffle_negatives(dataset: &PairedDataset, seed: u64) -> Result<PairedDataset> {
    let n = dataset.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "a derangement needs at least 2 pairs, got {n}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        let j = rng.gen_range(0..i);
        perm.swap(i, j);
    }
    let mut manifest = dataset.manifest().clone();
    let videos: Vec<usize> = manifest.entries.iter().map(|e| e.video_row).collect();
    for (i, e) in manifest.entries.iter_mut().enumerate() {
        e.video_row = videos[perm[i]];
    }
    dataset.with_manifest(manifest)
}

/// Settings for [`deterministic_prior_task`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorTaskSpec {
    pub n_pairs: usize,
    pub latent_dim: usize,
    pub condition_dim: usize,
    pub target_dim: usize,
    pub seed: u64,
    /// Held-out fraction used when the pairs are written with a manifest.
    pub test_fraction: f64,
}

impl Default for PriorTaskSpec {
    fn default() -> Self {
        PriorTaskSpec {
            n_pairs: 2000,
            latent_dim: 32,
            condition_dim: 512,
            target_dim: 512,
            seed: 0,
            test_fraction: 0.1,
        }
    }
}

/// Condition/target pairs where the target is a fixed function of the
/// condition, so the conditional distribution is a point mass.
///
/// Conditions are unit vectors on a `latent_dim`-dimensional manifold, as
/// projected embeddings would be; targets are a frozen random map of them.
pub fn deterministic_prior_task(spec: &PriorTaskSpec) -> Result<PriorTrainPairs> {
    if spec.latent_dim == 0 || spec.condition_dim == 0 || spec.target_dim == 0 {
        return Err(Error::Config("prior task dims must be positive".into()));
    }
    let z = Matrix::<f64>::randn(spec.n_pairs, spec.latent_dim, 1.0, &mut stream(spec.seed, 10));
    let fc = FrozenMap::new(spec.latent_dim, spec.condition_dim, 2, &mut stream(spec.seed, 11));
    let ft = FrozenMap::new(spec.condition_dim, spec.target_dim, 2, &mut stream(spec.seed, 12));
    let (cond, _) = crate::nn::normalize_rows(&fc.apply(&z)?);
    // rescale so the target map sees order-one inputs
    let scale = (spec.condition_dim as f64).sqrt();
    let target = ft.apply(&cond.map(|v| v * scale))?;
    PriorTrainPairs::new(
        to_embeddings(Modality::Shared, &cond)?,
        to_embeddings(Modality::Goal, &target)?,
    )
}
