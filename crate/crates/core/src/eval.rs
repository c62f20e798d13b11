//! Held-out retrieval metrics and prior fidelity statistics.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::clip::ClipAlignModel;
use crate::embedding::PairedDataset;
use crate::error::{Error, Result};
use crate::nn::{cosine, dot, normalize_rows, Matrix2D};
use crate::prior::{CvaePrior, PriorTrainPairs};

pub const DEFAULT_KS: [usize; 3] = [1, 5, 10];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    AudioToVideo,
    VideoToAudio,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p10: f64,
    pub p50: f64,
    pub p90: f64,
}

impl Percentiles {
    /// Linearly interpolated percentiles of `values`.
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("percentiles of an empty set".into()));
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let at = |q: f64| {
            let pos = q * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Ok(Percentiles {
            p10: at(0.1),
            p50: at(0.5),
            p90: at(0.9),
        })
    }
}

/// `percentiles` summarizes the per-query cosine between each query and
/// its true partner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub n_queries: usize,
    pub recall_at: BTreeMap<usize, f64>,
    pub median_rank: f64,
    pub mean_diagonal_cosine: f64,
    pub percentiles: Percentiles,
}

/// Rank (1-based) of the true partner for every query. Query `i` pairs with
/// candidate `i`; candidates scoring equal to the partner rank ahead of it
/// only if their index is lower.
pub fn partner_ranks(queries: &Matrix2D, candidates: &Matrix2D) -> Result<Vec<usize>> {
    if queries.shape() != candidates.shape() {
        return Err(Error::dims("retrieval", queries.shape(), candidates.shape()));
    }
    let (q, _) = normalize_rows(queries);
    let (c, _) = normalize_rows(candidates);
    let n = q.rows();
    Ok((0..n)
        .map(|i| {
            let qi = q.row(i);
            let scores: Vec<f64> = (0..n).map(|j| dot(qi, c.row(j))).collect();
            let s = scores[i];
            1 + scores
                .iter()
                .enumerate()
                .filter(|&(j, &x)| x > s || (x == s && j < i))
                .count()
        })
        .collect())
}

fn median(v: &[usize]) -> f64 {
    let mut v = v.to_vec();
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
    }
}

/// Retrieval report for row-aligned query and candidate embeddings.
/// Returns the report and the per-query ranks.
pub fn retrieval_from_embeddings(
    queries: &Matrix2D,
    candidates: &Matrix2D,
    ks: &[usize],
) -> Result<(RetrievalReport, Vec<usize>)> {
    let n = queries.rows();
    if n == 0 {
        return Err(Error::InvalidInput("no test pairs to evaluate".into()));
    }
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > n) {
        return Err(Error::InvalidInput(format!(
            "recall@{k} is undefined for {n} candidates"
        )));
    }
    let ranks = partner_ranks(queries, candidates)?;
    let recall_at = ks
        .iter()
        .map(|&k| (k, ranks.iter().filter(|&&r| r <= k).count() as f64 / n as f64))
        .collect();
    let diag: Vec<f64> = (0..n)
        .map(|i| cosine(queries.row(i), candidates.row(i)))
        .collect();
    let report = RetrievalReport {
        n_queries: n,
        recall_at,
        median_rank: median(&ranks),
        mean_diagonal_cosine: diag.iter().sum::<f64>() / n as f64,
        percentiles: Percentiles::of(&diag)?,
    };
    Ok((report, ranks))
}

/// Projects every pair of `pairs` through `model` and ranks the true partner
/// among all candidates of the other modality.
pub fn retrieval_metrics(
    model: &ClipAlignModel<f32>,
    pairs: &PairedDataset,
    ks: &[usize],
    direction: Direction,
) -> Result<(RetrievalReport, Vec<usize>)> {
    let pairs = pairs.aligned();
    let a = model.project_audio(pairs.audio().matrix())?;
    let v = model.project_video(pairs.video().matrix())?;
    match direction {
        Direction::AudioToVideo => retrieval_from_embeddings(&a, &v, ks),
        Direction::VideoToAudio => retrieval_from_embeddings(&v, &a, ks),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub n: usize,
    pub mean_cosine: f64,
    pub percentiles: Percentiles,
}

/// Cosine statistics between row-aligned samples and targets.
pub fn fidelity_from_samples(samples: &Matrix2D, targets: &Matrix2D) -> Result<FidelityReport> {
    if samples.shape() != targets.shape() {
        return Err(Error::dims("fidelity", samples.shape(), targets.shape()));
    }
    let n = samples.rows();
    if n == 0 {
        return Err(Error::InvalidInput("no pairs to evaluate".into()));
    }
    let cos: Vec<f64> = (0..n).map(|i| cosine(samples.row(i), targets.row(i))).collect();
    Ok(FidelityReport {
        n,
        mean_cosine: cos.iter().sum::<f64>() / n as f64,
        percentiles: Percentiles::of(&cos)?,
    })
}

/// One prior sample per condition, compared with its target.
pub fn prior_fidelity(prior: &CvaePrior<f32>, pairs: &PriorTrainPairs, seed: u64) -> Result<FidelityReport> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no pairs to evaluate".into()));
    }
    let samples = prior.sample_goals(pairs.condition().matrix(), seed)?;
    fidelity_from_samples(&samples, pairs.target().matrix())
}

pub fn emit_report<R: Serialize>(report: &R, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_report<R: DeserializeOwned>(path: impl AsRef<Path>) -> Result<R> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// `query,rank` lines, one per query.
pub fn ranks_csv(ranks: &[usize]) -> String {
    let mut out = String::from("query,rank\n");
    for (i, r) in ranks.iter().enumerate() {
        out.push_str(&format!("{i},{r}\n"));
    }
    out
}
