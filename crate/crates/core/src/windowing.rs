//! Sliding-window decomposition of a media file into one-second audio/video
//! samples.
//!
//! Windows start at the (optionally trimmed) media start and advance by
//! `hop = window_len_s * (1 - overlap)`. Tail segments shorter than a full
//! window are dropped. Time-to-index conversions round half up.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack for comparing accumulated window ends against the media duration.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowSpec {
    pub window_len_s: f64,
    pub overlap: f64,
    pub fps: f64,
    pub n_frames: usize,
    pub sample_rate: u32,
    /// Seconds skipped at the start of each source before the first window.
    pub leading_trim_s: f64,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec {
            window_len_s: 1.0,
            overlap: 0.75,
            fps: 32.0,
            n_frames: 16,
            sample_rate: 16_000,
            leading_trim_s: 0.0,
        }
    }
}

impl WindowSpec {
    /// Leading trim applied when ingesting long-form gameplay recordings.
    pub const INGEST_LEADING_TRIM_S: f64 = 120.0;

    pub fn hop(&self) -> f64 {
        self.window_len_s * (1.0 - self.overlap)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.window_len_s > 0.0) || !self.window_len_s.is_finite() {
            return Err(Error::Config(format!(
                "window_len_s must be positive, got {}",
                self.window_len_s
            )));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::Config(format!(
                "overlap must lie in [0, 1), got {}",
                self.overlap
            )));
        }
        if !(self.hop() > 0.0) {
            return Err(Error::Config(format!("hop must be positive, got {}", self.hop())));
        }
        if !(self.fps > 0.0) || !self.fps.is_finite() {
            return Err(Error::Config(format!("fps must be positive, got {}", self.fps)));
        }
        if self.n_frames == 0 {
            return Err(Error::Config("n_frames must be at least 1".into()));
        }
        if self.n_frames as f64 > self.fps * self.window_len_s + TIME_EPS {
            return Err(Error::Config(format!(
                "{} frames requested but a {} s window at {} fps holds only {}",
                self.n_frames,
                self.window_len_s,
                self.fps,
                self.fps * self.window_len_s
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        if !(self.leading_trim_s >= 0.0) {
            return Err(Error::Config(format!(
                "leading_trim_s must be non-negative, got {}",
                self.leading_trim_s
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub index: u64,
    pub start_s: f64,
    pub end_s: f64,
    pub frame_indices: Vec<u64>,
    /// Half-open `[start, end)` sample range.
    pub audio_sample_range: (u64, u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowManifest {
    pub source_id: String,
    pub windows: Vec<Window>,
}

impl WindowManifest {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Description of one media file, as consumed by the `window` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediaInfo {
    pub source_id: String,
    pub duration_s: f64,
    pub fps: f64,
    pub sample_rate: u32,
}

impl MediaInfo {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Values within this distance below a `.5` tie are treated as the tie, so
/// exact ties round up despite floating-point error in the product.
const TIE_EPS: f64 = 1e-6;

#[inline]
fn round_half_up(x: f64) -> u64 {
    (x + 0.5 + TIE_EPS).floor().max(0.0) as u64
}

/// Number of full windows that fit in `usable_s` seconds.
pub fn window_count(usable_s: f64, spec: &WindowSpec) -> Result<usize> {
    spec.validate()?;
    if !(usable_s >= 0.0) {
        return Err(Error::InvalidInput(format!("duration must be non-negative, got {usable_s}")));
    }
    let len = spec.window_len_s;
    let hop = spec.hop();
    if usable_s + TIME_EPS < len {
        return Ok(0);
    }
    let fits = |i: usize| i as f64 * hop + len <= usable_s + TIME_EPS;
    let mut n = ((usable_s - len) / hop).floor().max(0.0) as usize + 1;
    // the closed form can land one off when the quotient rounds across an integer
    while n > 0 && !fits(n - 1) {
        n -= 1;
    }
    while fits(n) {
        n += 1;
    }
    Ok(n)
}

/// Windows covering a source of `duration_s` seconds.
pub fn compute_windows(source_id: &str, duration_s: f64, spec: &WindowSpec) -> Result<WindowManifest> {
    spec.validate()?;
    if !(duration_s >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "duration must be non-negative, got {duration_s}"
        )));
    }
    let usable = (duration_s - spec.leading_trim_s).max(0.0);
    let n = window_count(usable, spec)?;
    let hop = spec.hop();
    let mut windows = Vec::with_capacity(n);
    for i in 0..n {
        let start_s = spec.leading_trim_s + i as f64 * hop;
        let end_s = start_s + spec.window_len_s;
        windows.push(Window {
            index: i as u64,
            start_s,
            end_s,
            frame_indices: frame_indices((start_s, end_s), spec)?,
            audio_sample_range: audio_sample_range((start_s, end_s), spec.sample_rate),
        });
    }
    Ok(WindowManifest {
        source_id: source_id.to_string(),
        windows,
    })
}

/// `n_frames` evenly strided frame indices starting at the window's first frame.
pub fn frame_indices((start_s, end_s): (f64, f64), spec: &WindowSpec) -> Result<Vec<u64>> {
    let frames_in_window = (end_s - start_s) * spec.fps;
    if spec.n_frames == 0 || frames_in_window + TIME_EPS < spec.n_frames as f64 {
        return Err(Error::InvalidInput(format!(
            "window [{start_s}, {end_s}) holds {frames_in_window} frames at {} fps, {} requested",
            spec.fps, spec.n_frames
        )));
    }
    let start_frame = round_half_up(start_s * spec.fps);
    let stride = frames_in_window / spec.n_frames as f64;
    Ok((0..spec.n_frames)
        .map(|k| round_half_up(start_frame as f64 + k as f64 * stride))
        .collect())
}

/// Half-open sample range of a window.
pub fn audio_sample_range((start_s, end_s): (f64, f64), sample_rate: u32) -> (u64, u64) {
    let sr = sample_rate as f64;
    (round_half_up(start_s * sr), round_half_up(end_s * sr))
}

/// Linear-interpolation resampler.
///
/// Output sample `k` sits at input position `k * from / to`; positions past
/// the last input sample take its value.
pub fn resample_linear(pcm: &[f32], from_rate: u32, to_rate: u32) -> Result<Vec<f32>> {
    if from_rate == 0 || to_rate == 0 {
        return Err(Error::Config("sample rates must be positive".into()));
    }
    if pcm.is_empty() {
        return Ok(Vec::new());
    }
    if from_rate == to_rate {
        return Ok(pcm.to_vec());
    }
    let out_len = round_half_up(pcm.len() as f64 * to_rate as f64 / from_rate as f64) as usize;
    let last = pcm.len() - 1;
    let out = (0..out_len)
        .map(|k| {
            // exact integer position keeps the fractional part free of drift
            let num = k as u64 * from_rate as u64;
            let i = (num / to_rate as u64) as usize;
            if i >= last {
                return pcm[last];
            }
            let frac = (num % to_rate as u64) as f64 / to_rate as f64;
            let a = pcm[i] as f64;
            let b = pcm[i + 1] as f64;
            (a + (b - a) * frac) as f32
        })
        .collect();
    Ok(out)
}
