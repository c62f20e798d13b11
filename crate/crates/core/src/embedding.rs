//! Embedding matrices produced by frozen encoders, their on-disk format,
//! and the pairing of audio rows with video rows.
//!
//! # EMB1 layout
//!
//! All integers little-endian:
//!
//! ```text
//! "EMB1" | version: u32 = 1 | tag_len: u32 | tag: utf-8 | rows: u32 | dim: u32 | rows*dim f32
//! ```

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Matrix2D, Scalar};

pub const EMB1_MAGIC: &[u8; 4] = b"EMB1";
pub const EMB1_VERSION: u32 = 1;

/// Output width of the audio classifier whose logits serve as audio embeddings.
pub const AUDIO_DIM: usize = 527;
/// Width of the frozen video encoder's embeddings.
pub const VIDEO_DIM: usize = 512;
/// Width of the shared space and of goal embeddings.
pub const SHARED_DIM: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Audio,
    Video,
    Shared,
    Goal,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Audio => "audio",
            Modality::Video => "video",
            Modality::Shared => "shared",
            Modality::Goal => "goal",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "audio" => Ok(Modality::Audio),
            "video" => Ok(Modality::Video),
            "shared" => Ok(Modality::Shared),
            "goal" => Ok(Modality::Goal),
            other => Err(Error::Format(format!("unknown modality tag {other:?}"))),
        }
    }
}

/// `N x D` finite `f32` embeddings tagged with their modality.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    modality: Modality,
    values: Matrix2D,
}

impl EmbeddingMatrix {
    pub fn new(modality: Modality, rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        let values = Matrix2D::from_vec(rows, dim, data)?;
        Self::from_matrix(modality, values)
    }

    pub fn from_matrix(modality: Modality, values: Matrix2D) -> Result<Self> {
        if values.cols() == 0 {
            return Err(Error::Dimension("embedding dim must be at least 1".into()));
        }
        if let Some((row, col)) = values.first_non_finite() {
            return Err(Error::NonFinite { row, col });
        }
        Ok(EmbeddingMatrix { modality, values })
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        self.values.row(i)
    }

    pub fn matrix(&self) -> &Matrix2D {
        &self.values
    }

    pub fn into_matrix(self) -> Matrix2D {
        self.values
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        EmbeddingMatrix {
            modality: self.modality,
            values: self.values.select_rows(idx),
        }
    }

    pub fn with_modality(mut self, modality: Modality) -> Self {
        self.modality = modality;
        self
    }
}

/// Expected widths per modality; `None` accepts any width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimPolicy {
    pub audio: Option<usize>,
    pub video: Option<usize>,
    pub shared: Option<usize>,
    pub goal: Option<usize>,
}

impl Default for DimPolicy {
    fn default() -> Self {
        DimPolicy {
            audio: Some(AUDIO_DIM),
            video: Some(VIDEO_DIM),
            shared: None,
            goal: Some(SHARED_DIM),
        }
    }
}

impl DimPolicy {
    pub fn any() -> Self {
        DimPolicy {
            audio: None,
            video: None,
            shared: None,
            goal: None,
        }
    }

    pub fn expected(&self, modality: Modality) -> Option<usize> {
        match modality {
            Modality::Audio => self.audio,
            Modality::Video => self.video,
            Modality::Shared => self.shared,
            Modality::Goal => self.goal,
        }
    }

    pub fn check(&self, m: &EmbeddingMatrix) -> Result<()> {
        match self.expected(m.modality()) {
            Some(d) if d != m.dim() => Err(Error::Dimension(format!(
                "{} embeddings must have dim {d}, got {}",
                m.modality(),
                m.dim()
            ))),
            _ => Ok(()),
        }
    }
}

/// Appends one EMB1 record.
pub(crate) fn encode_record(out: &mut Vec<u8>, tag: &str, rows: usize, dim: usize, data: &[f32]) {
    debug_assert_eq!(data.len(), rows * dim);
    out.extend_from_slice(EMB1_MAGIC);
    out.extend_from_slice(&EMB1_VERSION.to_le_bytes());
    out.extend_from_slice(&(tag.len() as u32).to_le_bytes());
    out.extend_from_slice(tag.as_bytes());
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) struct Record {
    pub tag: String,
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Corrupt(format!(
                "truncated {what}: need {n} bytes at offset {}, have {}",
                self.pos,
                self.buf.len() - self.pos
            ))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Decodes one EMB1 record from the front of `buf`, returning it and the
/// number of bytes consumed.
pub(crate) fn decode_record(buf: &[u8]) -> Result<(Record, usize)> {
    let mut r = Reader { buf, pos: 0 };
    let magic = r
        .take(4, "magic")
        .map_err(|_| Error::Format("file too short for EMB1 magic".into()))?;
    if magic != EMB1_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"EMB1\"",
            String::from_utf8_lossy(magic)
        )));
    }
    let version = r.u32("version")?;
    if version != EMB1_VERSION {
        return Err(Error::Format(format!("unsupported EMB1 version {version}")));
    }
    let tag_len = r.u32("tag length")? as usize;
    let tag = std::str::from_utf8(r.take(tag_len, "tag")?)
        .map_err(|e| Error::Format(format!("tag is not utf-8: {e}")))?
        .to_string();
    let rows = r.u32("row count")? as usize;
    let dim = r.u32("dim")? as usize;
    let n = rows
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Corrupt(format!("{rows}x{dim} overflows")))?;
    let payload = r.take(n, "payload")?;
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    if let Some(p) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            row: p / dim.max(1),
            col: p % dim.max(1),
        });
    }
    Ok((
        Record {
            tag,
            rows,
            dim,
            data,
        },
        r.pos,
    ))
}

pub fn encode_embeddings(m: &EmbeddingMatrix) -> Result<Vec<u8>> {
    if let Some((row, col)) = m.values.first_non_finite() {
        return Err(Error::NonFinite { row, col });
    }
    let mut out = Vec::with_capacity(25 + m.rows() * m.dim() * 4);
    encode_record(
        &mut out,
        m.modality.as_str(),
        m.rows(),
        m.dim(),
        m.values.as_slice(),
    );
    Ok(out)
}

pub fn decode_embeddings(buf: &[u8]) -> Result<EmbeddingMatrix> {
    let (rec, used) = decode_record(buf)?;
    if used != buf.len() {
        return Err(Error::Corrupt(format!(
            "{} trailing bytes after payload",
            buf.len() - used
        )));
    }
    let modality = rec.tag.parse()?;
    EmbeddingMatrix::new(modality, rec.rows, rec.dim, rec.data)
}

pub fn write_embeddings(path: impl AsRef<Path>, m: &EmbeddingMatrix) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_embeddings(m)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_embeddings(&bytes)
}

/// Scales every nonzero row to unit length. Zero rows are left as they are
/// and their indices returned.
pub fn l2_normalize_rows(m: &EmbeddingMatrix) -> (EmbeddingMatrix, Vec<usize>) {
    let (values, norms) = crate::nn::normalize_rows(&m.values);
    let zero_rows: Vec<usize> = norms
        .iter()
        .enumerate()
        .filter(|(_, &n)| n == 0.0)
        .map(|(i, _)| i)
        .collect();
    if !zero_rows.is_empty() {
        log::warn!(
            "{} zero-norm {} rows left unnormalized",
            zero_rows.len(),
            m.modality
        );
    }
    (
        EmbeddingMatrix {
            modality: m.modality,
            values,
        },
        zero_rows,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairEntry {
    pub source_id: String,
    pub window_index: u64,
    pub audio_row: usize,
    pub video_row: usize,
    pub split: Split,
}

/// Row-level correspondence between an audio and a video matrix.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PairManifest {
    pub entries: Vec<PairEntry>,
}

impl PairManifest {
    /// Pairs row `i` with row `i` for `n` rows, all in the train split.
    pub fn aligned(source_id: &str, n: usize) -> Self {
        PairManifest {
            entries: (0..n)
                .map(|i| PairEntry {
                    source_id: source_id.to_string(),
                    window_index: i as u64,
                    audio_row: i,
                    video_row: i,
                    split: Split::Train,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, split: Split) -> usize {
        self.entries.iter().filter(|e| e.split == split).count()
    }

    pub fn validate(&self, audio_rows: usize, video_rows: usize) -> Result<()> {
        let mut keys = HashSet::new();
        let mut seen_audio = HashSet::new();
        let mut seen_video = HashSet::new();
        for (i, e) in self.entries.iter().enumerate() {
            if e.audio_row >= audio_rows {
                return Err(Error::InvalidInput(format!(
                    "entry {i}: audio_row {} out of bounds for {audio_rows} rows",
                    e.audio_row
                )));
            }
            if e.video_row >= video_rows {
                return Err(Error::InvalidInput(format!(
                    "entry {i}: video_row {} out of bounds for {video_rows} rows",
                    e.video_row
                )));
            }
            if !keys.insert((e.source_id.as_str(), e.window_index)) {
                return Err(Error::InvalidInput(format!(
                    "entry {i}: duplicate (source_id, window_index) = ({:?}, {})",
                    e.source_id, e.window_index
                )));
            }
            if !seen_audio.insert(e.audio_row) {
                return Err(Error::InvalidInput(format!(
                    "entry {i}: audio_row {} referenced twice",
                    e.audio_row
                )));
            }
            if !seen_video.insert(e.video_row) {
                return Err(Error::InvalidInput(format!(
                    "entry {i}: video_row {} referenced twice",
                    e.video_row
                )));
            }
        }
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Audio and video embeddings with a validated pairing between their rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    audio: EmbeddingMatrix,
    video: EmbeddingMatrix,
    manifest: PairManifest,
}

impl PairedDataset {
    pub fn new(audio: EmbeddingMatrix, video: EmbeddingMatrix, manifest: PairManifest) -> Result<Self> {
        manifest.validate(audio.rows(), video.rows())?;
        Ok(PairedDataset {
            audio,
            video,
            manifest,
        })
    }

    pub fn audio(&self) -> &EmbeddingMatrix {
        &self.audio
    }

    pub fn video(&self) -> &EmbeddingMatrix {
        &self.video
    }

    pub fn manifest(&self) -> &PairManifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.manifest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.is_empty()
    }

    /// `(audio_rows, video_rows)` of the pairs in `split`, in manifest order.
    pub fn rows_in(&self, split: Split) -> (Vec<usize>, Vec<usize>) {
        self.manifest
            .entries
            .iter()
            .filter(|e| e.split == split)
            .map(|e| (e.audio_row, e.video_row))
            .unzip()
    }

    /// The pairs of one split as a standalone dataset with aligned rows.
    pub fn subset(&self, split: Split) -> PairedDataset {
        let entries: Vec<&PairEntry> = self
            .manifest
            .entries
            .iter()
            .filter(|e| e.split == split)
            .collect();
        let a: Vec<usize> = entries.iter().map(|e| e.audio_row).collect();
        let v: Vec<usize> = entries.iter().map(|e| e.video_row).collect();
        let manifest = PairManifest {
            entries: entries
                .iter()
                .enumerate()
                .map(|(i, e)| PairEntry {
                    audio_row: i,
                    video_row: i,
                    ..(*e).clone()
                })
                .collect(),
        };
        PairedDataset {
            audio: self.audio.select_rows(&a),
            video: self.video.select_rows(&v),
            manifest,
        }
    }

    /// Rebuilds the dataset so that pair `i` sits on row `i` of both matrices.
    pub fn aligned(&self) -> PairedDataset {
        let a: Vec<usize> = self.manifest.entries.iter().map(|e| e.audio_row).collect();
        let v: Vec<usize> = self.manifest.entries.iter().map(|e| e.video_row).collect();
        let manifest = PairManifest {
            entries: self
                .manifest
                .entries
                .iter()
                .enumerate()
                .map(|(i, e)| PairEntry {
                    audio_row: i,
                    video_row: i,
                    ..e.clone()
                })
                .collect(),
        };
        PairedDataset {
            audio: self.audio.select_rows(&a),
            video: self.video.select_rows(&v),
            manifest,
        }
    }

    pub fn with_manifest(&self, manifest: PairManifest) -> Result<PairedDataset> {
        PairedDataset::new(self.audio.clone(), self.video.clone(), manifest)
    }

    pub fn check_dims(&self, policy: &DimPolicy) -> Result<()> {
        policy.check(&self.audio)?;
        policy.check(&self.video)
    }
}

/// Number of test pairs for `total` pairs; the small slack absorbs products
/// such as `0.29 * 100` landing just below an integer.
pub fn test_count(total: usize, test_fraction: f64) -> usize {
    ((test_fraction * total as f64) + 1e-9).floor() as usize
}

/// Reassigns every pair to train or test. Exactly
/// `floor(test_fraction * total)` pairs, chosen by a seeded shuffle, land
/// in the test split.
pub fn split_pairs(dataset: &PairedDataset, test_fraction: f64, seed: u64) -> Result<PairedDataset> {
    if dataset.is_empty() {
        return Err(Error::InvalidInput("cannot split an empty dataset".into()));
    }
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Config(format!(
            "test_fraction must lie in [0, 1), got {test_fraction}"
        )));
    }
    let n = dataset.len();
    let n_test = test_count(n, test_fraction);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut split = vec![Split::Train; n];
    for &i in &order[..n_test] {
        split[i] = Split::Test;
    }
    let mut manifest = dataset.manifest.clone();
    for (e, s) in manifest.entries.iter_mut().zip(split) {
        e.split = s;
    }
    Ok(PairedDataset {
        audio: dataset.audio.clone(),
        video: dataset.video.clone(),
        manifest,
    })
}

/// Converts an `f64` matrix into an embedding matrix.
pub fn from_f64_matrix(modality: Modality, m: &crate::nn::Matrix<f64>) -> Result<EmbeddingMatrix> {
    EmbeddingMatrix::new(
        modality,
        m.rows(),
        m.cols(),
        m.as_slice().iter().map(|&v| f32::from_f64(v)).collect(),
    )
}
