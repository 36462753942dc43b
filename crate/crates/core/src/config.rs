//! Experiment configuration: one TOML file holding every stage's settings.
//!
//! ```toml
//! name = "toy"
//! preset = "toy"
//! seed = 7
//! output_dir = "exp"
//!
//! [corpus]        # generator settings, see `GeneratorConfig`
//! [frontend]      # n_mels, n_ceps, deltas
//! [bpe]           # merges
//! [encoder]       # conformer encoder
//! [decoder]       # transformer decoder; vocab_size is taken from the BPE model
//! [supervised]    # supervised model used for unit extraction
//! [quantizer]     # clusters, layer, k-means limits
//! [pretrain]      # masked prediction
//! [finetune]      # fine-tuning schedule
//! [decode]        # beam
//! [ablation]      # comparison matrix
//! ```
//!
//! Missing sections take the preset's values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::asr::AsrTrainConfig;
use crate::corpus::{GeneratorConfig, SpeakerVariation, SplitSizes};
use crate::error::{config_err, Result};
use crate::experiment::FrontendConfig;
use crate::nn::{DecoderConfig, EncoderConfig, Preset};
use crate::pretrain::PretrainConfig;
use crate::quantizer::KmeansConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BpeConfig {
    pub merges: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizerConfig {
    pub clusters: usize,
    /// Encoder block (1-based) clustered for SEAU units; `None` picks three
    /// quarters of the way up.
    pub layer: Option<usize>,
    pub max_iter: usize,
    pub tol: f64,
    pub max_frames: usize,
}

impl QuantizerConfig {
    pub fn kmeans(&self, clusters: usize, seed: u64) -> KmeansConfig {
        KmeansConfig {
            clusters,
            seed,
            max_iter: self.max_iter,
            tol: self.tol,
            max_frames: self.max_frames,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub beam: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    /// Fractions of the labeled split used to train the supervised model.
    pub fractions: Vec<f64>,
    pub clusters: Vec<usize>,
    /// Language of the out-domain corpus (a different phone inventory and
    /// lexicon from `corpus.language_seed`).
    pub out_domain_language_seed: u64,
    /// Pre-train, fine-tune and score every cell (otherwise unit metrics only).
    pub wer: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub preset: Preset,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub corpus: GeneratorConfig,
    pub frontend: FrontendConfig,
    pub bpe: BpeConfig,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub supervised: AsrTrainConfig,
    pub quantizer: QuantizerConfig,
    pub pretrain: PretrainConfig,
    pub finetune: AsrTrainConfig,
    pub decode: DecodeConfig,
    pub ablation: AblationConfig,
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Toy => Self::toy(),
            Preset::Paper => Self::paper(),
        }
    }

    /// Desk-scale settings: short utterances, a 4-block encoder, minutes of CPU.
    pub fn toy() -> Self {
        Self {
            name: "toy".into(),
            preset: Preset::Toy,
            seed: 7,
            output_dir: "exp".into(),
            corpus: GeneratorConfig {
                words_per_utterance: [2, 4],
                phone_duration: [3, 7],
                snr_db: Some(20.0),
                speaker: SpeakerVariation::none(),
                splits: SplitSizes {
                    labeled: 400,
                    unlabeled: 600,
                    finetune: 0,
                    test: 100,
                },
                ..GeneratorConfig::default()
            },
            frontend: FrontendConfig::default(),
            bpe: BpeConfig { merges: 0 },
            encoder: EncoderConfig::preset(Preset::Toy),
            decoder: DecoderConfig::preset(Preset::Toy, 0),
            supervised: AsrTrainConfig::toy_supervised(),
            quantizer: QuantizerConfig {
                clusters: 32,
                layer: None,
                max_iter: 100,
                tol: 1e-4,
                max_frames: 2_000_000,
            },
            pretrain: PretrainConfig::toy(),
            finetune: AsrTrainConfig::toy(),
            decode: DecodeConfig { beam: 1 },
            ablation: AblationConfig {
                fractions: vec![0.25, 1.0],
                clusters: vec![8, 32],
                out_domain_language_seed: 1001,
                wer: true,
            },
        }
    }

    /// The published model and schedule sizes. Constructible and validated;
    /// not trainable on a desk.
    pub fn paper() -> Self {
        Self {
            name: "paper".into(),
            preset: Preset::Paper,
            seed: 7,
            output_dir: "exp".into(),
            corpus: GeneratorConfig::default(),
            frontend: FrontendConfig::default(),
            bpe: BpeConfig { merges: 0 },
            encoder: EncoderConfig::preset(Preset::Paper),
            decoder: DecoderConfig::preset(Preset::Paper, 0),
            supervised: AsrTrainConfig::paper_supervised(),
            quantizer: QuantizerConfig {
                clusters: 1000,
                layer: None,
                max_iter: 100,
                tol: 1e-4,
                max_frames: 2_000_000,
            },
            pretrain: PretrainConfig::paper(),
            finetune: AsrTrainConfig::paper(),
            decode: DecodeConfig { beam: 1 },
            ablation: AblationConfig {
                fractions: vec![0.2, 1.0],
                clusters: vec![500, 1000],
                out_domain_language_seed: 1001,
                wer: true,
            },
        }
    }

    /// Parses a TOML file; sections it omits come from its `preset`
    /// (default toy).
    pub fn from_toml(text: &str) -> Result<Self> {
        let value: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| config_err(e.to_string()))?;
        let preset = match value.get("preset") {
            Some(p) => p
                .as_str()
                .ok_or_else(|| config_err("preset must be a string"))?
                .parse()?,
            None => Preset::Toy,
        };
        let mut base =
            toml::Table::try_from(Self::preset(preset)).map_err(|e| config_err(e.to_string()))?;
        merge(&mut base, value);
        let cfg: Self = base
            .try_into()
            .map_err(|e: toml::de::Error| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| config_err(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(config_err(format!(
                "invalid experiment name `{}`",
                self.name
            )));
        }
        self.corpus.validate()?;
        self.encoder.validate()?;
        if self.encoder.input_dim != self.frontend.n_mels {
            return Err(config_err(format!(
                "encoder input_dim {} must equal frontend n_mels {}",
                self.encoder.input_dim, self.frontend.n_mels
            )));
        }
        if self.decoder.memory_dim != self.encoder.projection_dim {
            return Err(config_err(format!(
                "decoder memory_dim {} must equal encoder projection_dim {}",
                self.decoder.memory_dim, self.encoder.projection_dim
            )));
        }
        if let Some(l) = self.quantizer.layer {
            if l == 0 || l > self.encoder.n_blocks {
                return Err(config_err(format!(
                    "quantizer layer {l} out of range 1..={}",
                    self.encoder.n_blocks
                )));
            }
        }
        if self.quantizer.clusters < 2 || self.ablation.clusters.iter().any(|&c| c < 2) {
            return Err(config_err("cluster counts must be at least 2"));
        }
        if self.decode.beam == 0 {
            return Err(config_err("beam must be at least 1"));
        }
        if self
            .ablation
            .fractions
            .iter()
            .any(|&f| !(f > 0.0 && f <= 1.0))
        {
            return Err(config_err("ablation fractions must lie in (0, 1]"));
        }
        if self.ablation.out_domain_language_seed == self.corpus.language_seed {
            return Err(config_err(
                "out-domain language must differ from the in-domain language",
            ));
        }
        self.pretrain.mask.validate()?;
        self.supervised.specaugment.validate(self.frontend.n_mels)?;
        self.finetune.specaugment.validate(self.frontend.n_mels)?;
        Ok(())
    }

    pub fn unit_layer(&self) -> usize {
        self.quantizer
            .layer
            .unwrap_or_else(|| self.encoder.default_unit_layer())
    }

    pub fn decoder_for(&self, vocab_size: usize) -> DecoderConfig {
        DecoderConfig {
            vocab_size,
            ..self.decoder.clone()
        }
    }

    pub fn experiment_dir(&self) -> PathBuf {
        self.output_dir.join(&self.name)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        content_hash(&serde_json::to_vec(self).expect("config serializes"))
    }
}

pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A seed derived from the root seed and a stage name.
pub fn named_seed(root: u64, name: &str) -> u64 {
    let d = Sha256::new()
        .chain_update(root.to_le_bytes())
        .chain_update(name.as_bytes())
        .finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
