//! In-memory building blocks shared by the stage pipeline and the
//! comparison studies: featurization, unit extraction, and scoring.

use seau_autodiff::{Checkpoint, Graph, Mode, ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::asr::{beam_decode, score, AsrExample, BpeModel, ScoreReport};
use crate::corpus::Utterance;
use crate::error::{config_err, Error, Result};
use crate::frontend::{fbank, mfcc, FeatureKind, Normalizer};
use crate::nn::{AsrModel, Encoder};
use crate::pretrain::PretrainExample;
use crate::quantizer::{
    downsample_alignment, kmeans_fit, pool_to_unit_rate, unit_quality, Codebook, FrameReservoir,
    KmeansConfig, UnitQualityReport,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontendConfig {
    pub n_mels: usize,
    pub n_ceps: usize,
    pub deltas: bool,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            n_mels: 40,
            n_ceps: 13,
            deltas: true,
        }
    }
}

/// Log-mel and MFCC features of a set of utterances, with their labels.
#[derive(Clone, Debug)]
pub struct Featurized {
    pub ids: Vec<String>,
    /// Raw (unnormalized) log-mel frames.
    pub fbank: Vec<Tensor<f32>>,
    pub mfcc: Vec<Tensor<f32>>,
    pub alignments: Vec<Vec<u16>>,
    pub transcripts: Vec<String>,
}

impl Featurized {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Phone alignments at the unit rate.
    pub fn unit_alignments(&self) -> Vec<Vec<u16>> {
        self.alignments
            .iter()
            .map(|a| downsample_alignment(a))
            .collect()
    }

    pub fn normalized(&self, norm: &Normalizer) -> Result<Vec<Tensor<f32>>> {
        self.fbank.iter().map(|f| norm.apply_frames(f)).collect()
    }

    /// The first `n` utterances.
    pub fn take(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            ids: self.ids[..n].to_vec(),
            fbank: self.fbank[..n].to_vec(),
            mfcc: self.mfcc[..n].to_vec(),
            alignments: self.alignments[..n].to_vec(),
            transcripts: self.transcripts[..n].to_vec(),
        }
    }
}

pub fn featurize(utts: &[Utterance], cfg: &FrontendConfig) -> Result<Featurized> {
    let mut out = Featurized {
        ids: Vec::with_capacity(utts.len()),
        fbank: Vec::with_capacity(utts.len()),
        mfcc: Vec::with_capacity(utts.len()),
        alignments: Vec::with_capacity(utts.len()),
        transcripts: Vec::with_capacity(utts.len()),
    };
    for u in utts {
        let fb = fbank(&u.signal_frames, cfg.n_mels)?;
        let mf = mfcc(&fb, cfg.n_ceps, cfg.deltas)?;
        out.ids.push(u.id.clone());
        out.fbank.push(fb.frames);
        out.mfcc.push(mf.frames);
        out.alignments.push(u.phone_alignment.clone());
        out.transcripts.push(u.transcript.clone());
    }
    Ok(out)
}

pub fn asr_examples(
    ids: &[String],
    inputs: &[Tensor<f32>],
    transcripts: &[String],
    bpe: &BpeModel,
) -> Vec<AsrExample> {
    ids.iter()
        .zip(inputs)
        .zip(transcripts)
        .map(|((id, f), t)| AsrExample {
            id: id.clone(),
            features: f.clone(),
            tokens: bpe.encode(t),
        })
        .collect()
}

pub fn pretrain_examples(
    ids: &[String],
    inputs: &[Tensor<f32>],
    units: &[Vec<u16>],
) -> Vec<PretrainExample> {
    ids.iter()
        .zip(inputs)
        .zip(units)
        .map(|((id, f), u)| PretrainExample {
            id: id.clone(),
            features: f.clone(),
            units: u.clone(),
        })
        .collect()
}

/// Output of encoder block `layer` (1-based) in evaluation mode.
pub fn layer_features(
    store: &ParamStore,
    encoder: &Encoder,
    features: &Tensor<f32>,
    layer: usize,
) -> Result<Tensor<f32>> {
    let n = encoder.blocks.len();
    if layer == 0 || layer > n {
        return Err(config_err(format!("layer {layer} out of range 1..={n}")));
    }
    let mut g = Graph::new(store, Mode::Eval);
    let x = encoder.features(&mut g, features)?;
    let out = encoder.forward(&mut g, x, None, 0)?;
    Ok(g.value(out.layers[layer - 1]).clone())
}

/// A fitted codebook, the units it assigns, and their quality.
#[derive(Clone, Debug)]
pub struct UnitTargets {
    pub codebook: Codebook,
    pub units: Vec<Vec<u16>>,
    pub quality: UnitQualityReport,
}

/// Normalizes, fits k-means on a reservoir sample and assigns every frame.
pub fn cluster_frames(
    frames: &[Tensor<f32>],
    alignments: &[Vec<u16>],
    kmeans: &KmeansConfig,
    kind: FeatureKind,
    layer: Option<usize>,
) -> Result<UnitTargets> {
    if frames.is_empty() {
        return Err(Error::InsufficientData("no utterances to cluster".into()));
    }
    let norm = Normalizer::fit(frames.iter())?;
    let normed: Vec<Tensor<f32>> = frames
        .iter()
        .map(|f| norm.apply_frames(f))
        .collect::<Result<_>>()?;
    let mut reservoir = FrameReservoir::new(kmeans.max_frames, kmeans.seed);
    for f in &normed {
        reservoir.push(f)?;
    }
    let mut codebook = kmeans_fit(&reservoir.into_tensor()?, kmeans, kind)?;
    codebook.layer = layer;
    let units: Vec<Vec<u16>> = normed
        .iter()
        .map(|f| crate::quantizer::assign_units(&codebook, f))
        .collect::<Result<_>>()?;
    codebook.normalizer = Some(norm);
    let quality = unit_quality(&units, alignments)?;
    Ok(UnitTargets {
        codebook,
        units,
        quality,
    })
}

/// Units from a supervised model's encoder block `layer`.
pub fn seau_targets(
    store: &ParamStore,
    encoder: &Encoder,
    layer: usize,
    inputs: &[Tensor<f32>],
    unit_alignments: &[Vec<u16>],
    kmeans: &KmeansConfig,
) -> Result<UnitTargets> {
    let feats: Vec<Tensor<f32>> = inputs
        .iter()
        .map(|x| layer_features(store, encoder, x, layer))
        .collect::<Result<_>>()?;
    cluster_frames(
        &feats,
        unit_alignments,
        kmeans,
        FeatureKind::EncoderLayer,
        Some(layer),
    )
}

/// Units from MFCC frames averaged to the unit rate.
pub fn mfcc_targets(
    mfcc: &[Tensor<f32>],
    unit_alignments: &[Vec<u16>],
    kmeans: &KmeansConfig,
) -> Result<UnitTargets> {
    let pooled: Vec<Tensor<f32>> = mfcc.iter().map(pool_to_unit_rate).collect::<Result<_>>()?;
    cluster_frames(&pooled, unit_alignments, kmeans, FeatureKind::Mfcc, None)
}

/// Decodes every input and scores against the references.
pub fn decode_and_score(
    model: &AsrModel,
    store: &ParamStore,
    bpe: &BpeModel,
    inputs: &[Tensor<f32>],
    references: &[String],
    beam: usize,
) -> Result<(Vec<String>, ScoreReport)> {
    let hyps: Vec<String> = inputs
        .iter()
        .map(|x| Ok(bpe.decode(&beam_decode(model, store, x, beam)?.tokens)))
        .collect::<Result<_>>()?;
    let report = score(
        hyps.iter()
            .map(String::as_str)
            .zip(references.iter().map(String::as_str)),
    )?;
    Ok((hyps, report))
}

/// Wraps an in-memory store as a checkpoint (no optimizer state).
pub fn snapshot(store: &ParamStore, config: serde_json::Value) -> Checkpoint {
    Checkpoint::from_store(store, config)
}
