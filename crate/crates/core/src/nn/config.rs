use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Toy,
    Paper,
}

impl std::str::FromStr for Preset {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(Preset::Toy),
            "paper" => Ok(Preset::Paper),
            other => Err(config_err(format!(
                "unknown preset `{other}` (expected toy or paper)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_dim: usize,
    /// Channels of both subsampling convolutions.
    pub extractor_channels: usize,
    pub n_blocks: usize,
    pub model_dim: usize,
    pub ffn_dim: usize,
    pub n_heads: usize,
    pub conv_kernel: usize,
    pub dropout: f64,
    pub layerdrop: f64,
    /// Width of the projection between encoder and decoder, and of the
    /// pre-training prediction head.
    pub projection_dim: usize,
    /// Add sinusoidal absolute positions after subsampling. Without them the
    /// convolution modules are the only source of order information.
    #[serde(default = "default_true")]
    pub positional_encoding: bool,
}

fn default_true() -> bool {
    true
}

impl EncoderConfig {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Toy => Self {
                input_dim: 40,
                extractor_channels: 16,
                n_blocks: 4,
                model_dim: 64,
                ffn_dim: 128,
                n_heads: 4,
                conv_kernel: 7,
                dropout: 0.1,
                layerdrop: 0.0,
                projection_dim: 96,
                positional_encoding: false,
            },
            Preset::Paper => Self {
                input_dim: 40,
                extractor_channels: 512,
                n_blocks: 16,
                model_dim: 512,
                ffn_dim: 2048,
                n_heads: 8,
                conv_kernel: 15,
                dropout: 0.1,
                layerdrop: 0.2,
                projection_dim: 768,
                positional_encoding: true,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_blocks == 0 || self.model_dim == 0 || self.ffn_dim == 0 || self.input_dim == 0 {
            return Err(config_err("encoder dimensions must be positive"));
        }
        if self.n_heads == 0 || !self.model_dim.is_multiple_of(self.n_heads) {
            return Err(config_err(format!(
                "model_dim {} not divisible by n_heads {}",
                self.model_dim, self.n_heads
            )));
        }
        if self.conv_kernel.is_multiple_of(2) {
            return Err(config_err(format!(
                "conv_kernel {} must be odd",
                self.conv_kernel
            )));
        }
        if !(0.0..1.0).contains(&self.layerdrop) || !(0.0..1.0).contains(&self.dropout) {
            return Err(config_err("dropout and layerdrop must lie in [0, 1)"));
        }
        if self.extractor_channels == 0 || self.projection_dim == 0 {
            return Err(config_err(
                "extractor_channels and projection_dim must be positive",
            ));
        }
        Ok(())
    }

    /// Default layer for unit extraction: three quarters of the way up.
    pub fn default_unit_layer(&self) -> usize {
        ((0.75 * self.n_blocks as f64).round() as usize).clamp(1, self.n_blocks)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub n_layers: usize,
    pub model_dim: usize,
    pub ffn_dim: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub dropout: f64,
    /// Longest accepted token sequence, BOS included.
    pub max_len: usize,
    /// Width of the encoder memory attended to.
    pub memory_dim: usize,
}

impl DecoderConfig {
    pub fn preset(p: Preset, vocab_size: usize) -> Self {
        match p {
            Preset::Toy => Self {
                n_layers: 2,
                model_dim: 64,
                ffn_dim: 128,
                n_heads: 4,
                vocab_size,
                dropout: 0.1,
                max_len: 256,
                memory_dim: 96,
            },
            Preset::Paper => Self {
                n_layers: 6,
                model_dim: 512,
                ffn_dim: 2048,
                n_heads: 8,
                vocab_size,
                dropout: 0.1,
                max_len: 512,
                memory_dim: 768,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.model_dim == 0 || self.ffn_dim == 0 || self.memory_dim == 0 {
            return Err(config_err("decoder dimensions must be positive"));
        }
        if self.n_heads == 0 || !self.model_dim.is_multiple_of(self.n_heads) {
            return Err(config_err(format!(
                "decoder model_dim {} not divisible by n_heads {}",
                self.model_dim, self.n_heads
            )));
        }
        if self.vocab_size < 4 {
            return Err(config_err("vocab_size must cover pad/bos/eos/unk"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(config_err("dropout must lie in [0, 1)"));
        }
        if self.max_len < 2 {
            return Err(config_err("max_len must be at least 2"));
        }
        Ok(())
    }
}
