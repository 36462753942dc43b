use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seau_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpecAugmentConfig {
    /// Maximum width of a feature band.
    pub freq_mask: usize,
    /// Maximum width of a time span.
    pub time_mask: usize,
    pub n_freq_masks: usize,
    pub n_time_masks: usize,
}

impl SpecAugmentConfig {
    pub fn paper() -> Self {
        Self {
            freq_mask: 15,
            time_mask: 40,
            n_freq_masks: 2,
            n_time_masks: 2,
        }
    }

    pub fn disabled() -> Self {
        Self {
            freq_mask: 0,
            time_mask: 0,
            n_freq_masks: 0,
            n_time_masks: 0,
        }
    }

    pub fn validate(&self, feature_dim: usize) -> Result<()> {
        if self.freq_mask >= feature_dim && self.n_freq_masks > 0 {
            return Err(config_err(format!(
                "freq_mask {} must be below the feature dimension {feature_dim}",
                self.freq_mask
            )));
        }
        Ok(())
    }

    /// Draws the bands and spans for a `t x d` input.
    pub fn sample(&self, t: usize, d: usize, seed: u64) -> SpecAugmentMasks {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize, max: usize, len: usize| -> Vec<(usize, usize)> {
            (0..n)
                .map(|_| {
                    let w = rng.random_range(0..=max.min(len));
                    let start = rng.random_range(0..=len - w);
                    (start, w)
                })
                .collect()
        };
        let freq = draw(self.n_freq_masks, self.freq_mask, d);
        let time = draw(self.n_time_masks, self.time_mask, t);
        SpecAugmentMasks { freq, time }
    }

    /// Zeroes the sampled bands and spans; other cells are copied unchanged.
    pub fn apply(
        &self,
        features: &Tensor<f32>,
        seed: u64,
    ) -> Result<(Tensor<f32>, SpecAugmentMasks)> {
        if features.rank() != 2 {
            return Err(config_err(format!(
                "specaugment expects T x D, got {:?}",
                features.shape()
            )));
        }
        let (t, d) = (features.rows(), features.cols());
        self.validate(d)?;
        let masks = self.sample(t, d, seed);
        let mut out = features.clone();
        for &(s, w) in &masks.time {
            for i in s..s + w {
                out.row_mut(i).iter_mut().for_each(|v| *v = 0.0);
            }
        }
        for &(s, w) in &masks.freq {
            for i in 0..t {
                out.row_mut(i)[s..s + w].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        Ok((out, masks))
    }
}

/// `(start, width)` of every drawn band and span.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpecAugmentMasks {
    pub freq: Vec<(usize, usize)>,
    pub time: Vec<(usize, usize)>,
}

impl SpecAugmentMasks {
    pub fn masked_rows(&self, t: usize) -> Vec<bool> {
        cover(&self.time, t)
    }

    pub fn masked_cols(&self, d: usize) -> Vec<bool> {
        cover(&self.freq, d)
    }
}

fn cover(spans: &[(usize, usize)], len: usize) -> Vec<bool> {
    let mut m = vec![false; len];
    for &(s, w) in spans {
        m[s..s + w].iter_mut().for_each(|v| *v = true);
    }
    m
}
