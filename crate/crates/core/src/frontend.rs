//! Filterbank and MFCC features over spectral frames, plus per-dimension
//! mean/variance normalization.

use std::path::Path;

use seau_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::format::{encode_frame_file, read_frame_file, write_atomic};

pub const FRAME_RATE_HZ: f64 = 100.0;
pub const LOG_FLOOR: f64 = 1e-10;
pub const STD_FLOOR: f64 = 1e-8;
const NYQUIST_HZ: f64 = 8000.0;
const DELTA_WINDOW: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    Signal,
    Fbank,
    Mfcc,
    EncoderLayer,
}

impl FeatureKind {
    /// Value stored in the version field of frame files.
    pub fn file_version(self) -> u32 {
        match self {
            FeatureKind::Signal => 1,
            FeatureKind::Fbank => 2,
            FeatureKind::Mfcc => 3,
            FeatureKind::EncoderLayer => 4,
        }
    }

    pub fn from_file_version(v: u32) -> Option<Self> {
        Some(match v {
            1 => FeatureKind::Signal,
            2 => FeatureKind::Fbank,
            3 => FeatureKind::Mfcc,
            4 => FeatureKind::EncoderLayer,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    /// `T x D`.
    pub frames: Tensor<f32>,
    pub kind: FeatureKind,
    pub frame_rate_hz: f64,
}

impl FeatureSequence {
    pub fn new(frames: Tensor<f32>, kind: FeatureKind, frame_rate_hz: f64) -> Result<Self> {
        if frames.rank() != 2 || frames.rows() == 0 {
            return Err(Error::Data(format!(
                "feature sequence needs T >= 1 rows, got shape {:?}",
                frames.shape()
            )));
        }
        if !frames.is_finite() {
            return Err(Error::Domain(
                "feature sequence contains non-finite values".into(),
            ));
        }
        Ok(Self {
            frames,
            kind,
            frame_rate_hz,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Dense `n_mels x n_bins` projection applied before the log.
#[derive(Clone, Debug, PartialEq)]
pub struct Filterbank {
    n_mels: usize,
    n_bins: usize,
    weights: Vec<f64>,
}

impl Filterbank {
    /// Triangular Mel-spaced filters over `n_bins` linear bins spanning
    /// 0..8 kHz. A filter too narrow to cover any bin falls back to the bin
    /// nearest its centre.
    pub fn mel(n_bins: usize, n_mels: usize) -> Result<Self> {
        if n_mels == 0 {
            return Err(config_err("n_mels must be at least 1"));
        }
        if n_bins < 2 {
            return Err(config_err("filterbank needs at least 2 input bins"));
        }
        let bin_hz = |k: usize| k as f64 * NYQUIST_HZ / (n_bins - 1) as f64;
        let top = hz_to_mel(NYQUIST_HZ);
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
            .collect();
        let mut weights = vec![0.0; n_mels * n_bins];
        for m in 0..n_mels {
            let (lo, centre, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let row = &mut weights[m * n_bins..(m + 1) * n_bins];
            for (k, w) in row.iter_mut().enumerate() {
                let f = bin_hz(k);
                *w = if f > lo && f <= centre {
                    (f - lo) / (centre - lo)
                } else if f > centre && f < hi {
                    (hi - f) / (hi - centre)
                } else {
                    0.0
                };
            }
            if row.iter().all(|&w| w == 0.0) {
                let nearest = (centre / NYQUIST_HZ * (n_bins - 1) as f64).round() as usize;
                row[nearest.min(n_bins - 1)] = 1.0;
            }
        }
        Ok(Self {
            n_mels,
            n_bins,
            weights,
        })
    }

    pub fn from_matrix(n_mels: usize, n_bins: usize, weights: Vec<f64>) -> Result<Self> {
        if n_mels == 0 || n_bins == 0 || weights.len() != n_mels * n_bins {
            return Err(config_err(format!(
                "filterbank matrix of {} values does not match {n_mels} x {n_bins}",
                weights.len()
            )));
        }
        Ok(Self {
            n_mels,
            n_bins,
            weights,
        })
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Projects nonnegative spectral frames and takes the floored log.
    pub fn apply(&self, frames: &Tensor<f32>) -> Result<FeatureSequence> {
        if frames.rank() != 2 || frames.cols() != self.n_bins {
            return Err(config_err(format!(
                "filterbank expects {} bins, frames have shape {:?}",
                self.n_bins,
                frames.shape()
            )));
        }
        if let Some(v) = frames
            .data()
            .iter()
            .find(|v| !(**v >= 0.0) || !v.is_finite())
        {
            return Err(Error::Domain(format!(
                "spectral energy must be finite and nonnegative, found {v}"
            )));
        }
        let t = frames.rows();
        let mut out = Vec::with_capacity(t * self.n_mels);
        for i in 0..t {
            let x = frames.row(i);
            for m in 0..self.n_mels {
                let w = &self.weights[m * self.n_bins..(m + 1) * self.n_bins];
                let e: f64 = w.iter().zip(x).map(|(w, x)| w * *x as f64).sum();
                out.push(e.max(LOG_FLOOR).ln() as f32);
            }
        }
        FeatureSequence::new(
            Tensor::new(&[t, self.n_mels], out)?,
            FeatureKind::Fbank,
            FRAME_RATE_HZ,
        )
    }
}

pub fn fbank(frames: &Tensor<f32>, n_mels: usize) -> Result<FeatureSequence> {
    if frames.rank() != 2 {
        return Err(config_err(format!(
            "expected T x D frames, got {:?}",
            frames.shape()
        )));
    }
    Filterbank::mel(frames.cols(), n_mels)?.apply(frames)
}

/// Orthonormal DCT-II matrix, row `k` holding basis function `k`.
pub fn dct_matrix(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for k in 0..n {
        let s = if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        for i in 0..n {
            m[k * n + i] =
                s * (std::f64::consts::PI * (i as f64 + 0.5) * k as f64 / n as f64).cos();
        }
    }
    m
}

pub fn mfcc(
    features: &FeatureSequence,
    n_ceps: usize,
    with_deltas: bool,
) -> Result<FeatureSequence> {
    if features.kind != FeatureKind::Fbank {
        return Err(config_err(format!(
            "mfcc needs fbank input, got {:?}",
            features.kind
        )));
    }
    let n = features.dim();
    if n_ceps == 0 || n_ceps > n {
        return Err(config_err(format!(
            "n_ceps must lie in [1, {n}], got {n_ceps}"
        )));
    }
    let dct = dct_matrix(n);
    let t = features.len();
    let mut ceps = vec![0.0f64; t * n_ceps];
    for i in 0..t {
        let x = features.frames.row(i);
        for k in 0..n_ceps {
            ceps[i * n_ceps + k] = dct[k * n..(k + 1) * n]
                .iter()
                .zip(x)
                .map(|(a, b)| a * *b as f64)
                .sum();
        }
    }
    let (data, dim) = if with_deltas {
        let d1 = deltas(&ceps, t, n_ceps);
        let d2 = deltas(&d1, t, n_ceps);
        let mut out = Vec::with_capacity(t * n_ceps * 3);
        for i in 0..t {
            let r = i * n_ceps..(i + 1) * n_ceps;
            out.extend_from_slice(&ceps[r.clone()]);
            out.extend_from_slice(&d1[r.clone()]);
            out.extend_from_slice(&d2[r]);
        }
        (out, n_ceps * 3)
    } else {
        (ceps, n_ceps)
    };
    FeatureSequence::new(
        Tensor::new(&[t, dim], data.into_iter().map(|v| v as f32).collect())?,
        FeatureKind::Mfcc,
        features.frame_rate_hz,
    )
}

/// Regression deltas over a +/-2 frame window. Edges are padded by odd
/// reflection about the boundary frame, so linear trends extend linearly.
pub fn deltas(x: &[f64], t: usize, d: usize) -> Vec<f64> {
    let at = |i: isize, j: usize| -> f64 {
        let last = t as isize - 1;
        if i < 0 {
            let mirror = (-i).min(last);
            2.0 * x[j] - x[mirror as usize * d + j]
        } else if i > last {
            let mirror = (2 * last - i).max(0);
            2.0 * x[last as usize * d + j] - x[mirror as usize * d + j]
        } else {
            x[i as usize * d + j]
        }
    };
    let norm: f64 = 2.0 * (1..=DELTA_WINDOW).map(|n| (n * n) as f64).sum::<f64>();
    let mut out = vec![0.0; t * d];
    for i in 0..t as isize {
        for j in 0..d {
            let mut acc = 0.0;
            for n in 1..=DELTA_WINDOW as isize {
                acc += n as f64 * (at(i + n, j) - at(i - n, j));
            }
            out[i as usize * d + j] = acc / norm;
        }
    }
    out
}

/// Per-dimension mean and population standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Dimensions whose std was raised to the floor.
    pub clamped: Vec<usize>,
}

/// Streaming accumulator for [`Normalizer`] (Welford, double precision).
#[derive(Clone, Debug, Default)]
pub struct NormalizerBuilder {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl NormalizerBuilder {
    pub fn push(&mut self, frames: &Tensor<f32>) -> Result<()> {
        if frames.rank() != 2 {
            return Err(config_err(format!(
                "expected T x D frames, got {:?}",
                frames.shape()
            )));
        }
        if self.count == 0 && self.mean.is_empty() {
            self.mean = vec![0.0; frames.cols()];
            self.m2 = vec![0.0; frames.cols()];
        }
        if frames.cols() != self.mean.len() {
            return Err(Error::Data(format!(
                "feature dimension changed from {} to {}",
                self.mean.len(),
                frames.cols()
            )));
        }
        for i in 0..frames.rows() {
            self.count += 1;
            let n = self.count as f64;
            for (j, &x) in frames.row(i).iter().enumerate() {
                let x = x as f64;
                let delta = x - self.mean[j];
                self.mean[j] += delta / n;
                self.m2[j] += delta * (x - self.mean[j]);
            }
        }
        Ok(())
    }

    pub fn finish(self) -> Result<Normalizer> {
        if self.count == 0 {
            return Err(Error::InsufficientData(
                "normalizer fitted on zero frames".into(),
            ));
        }
        let n = self.count as f64;
        let mut clamped = Vec::new();
        let std = self
            .m2
            .iter()
            .enumerate()
            .map(|(j, m2)| {
                let s = (m2 / n).sqrt();
                if s < STD_FLOOR {
                    clamped.push(j);
                    STD_FLOOR
                } else {
                    s
                }
            })
            .collect();
        Ok(Normalizer {
            mean: self.mean,
            std,
            clamped,
        })
    }
}

impl Normalizer {
    pub fn fit<'a>(features: impl IntoIterator<Item = &'a Tensor<f32>>) -> Result<Self> {
        let mut b = NormalizerBuilder::default();
        for f in features {
            b.push(f)?;
        }
        b.finish()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_frames(&self, frames: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.check(frames)?;
        let d = self.dim();
        Ok(Tensor::from_fn(frames.shape(), |i| {
            let j = i % d;
            ((frames.data()[i] as f64 - self.mean[j]) / self.std[j]) as f32
        }))
    }

    pub fn apply(&self, features: &FeatureSequence) -> Result<FeatureSequence> {
        Ok(FeatureSequence {
            frames: self.apply_frames(&features.frames)?,
            ..features.clone()
        })
    }

    pub fn invert(&self, features: &FeatureSequence) -> Result<FeatureSequence> {
        self.check(&features.frames)?;
        let d = self.dim();
        let frames = Tensor::from_fn(features.frames.shape(), |i| {
            let j = i % d;
            (features.frames.data()[i] as f64 * self.std[j] + self.mean[j]) as f32
        });
        Ok(FeatureSequence {
            frames,
            ..features.clone()
        })
    }

    fn check(&self, frames: &Tensor<f32>) -> Result<()> {
        if frames.rank() != 2 || frames.cols() != self.dim() {
            return Err(config_err(format!(
                "normalizer has dimension {}, frames have shape {:?}",
                self.dim(),
                frames.shape()
            )));
        }
        Ok(())
    }
}

/// Writes features in the corpus frame format; the version field records
/// the feature kind.
pub fn write_features(
    path: &Path,
    features: &FeatureSequence,
    alignment: &[u16],
    transcript: &str,
) -> Result<()> {
    let bytes = encode_frame_file(
        features.kind.file_version(),
        &features.frames,
        alignment,
        transcript,
    );
    write_atomic(path, &bytes)
}

pub fn read_features(path: &Path, id: &str) -> Result<(FeatureSequence, Vec<u16>, String)> {
    let file = read_frame_file(path, id)?;
    let kind = FeatureKind::from_file_version(file.version).ok_or_else(|| Error::Integrity {
        utterance: id.to_string(),
        path: path.to_path_buf(),
        reason: format!("unknown feature kind {}", file.version),
    })?;
    let seq = FeatureSequence::new(file.frames, kind, FRAME_RATE_HZ)?;
    Ok((seq, file.alignment, file.transcript))
}
