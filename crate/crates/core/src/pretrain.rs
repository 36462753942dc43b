//! Masked-prediction pre-training on discrete unit targets.
//!
//! Frames are masked after the subsampler (at the unit rate) by swapping in
//! a learned embedding; the encoder output is projected and scored against
//! a unit embedding table by cosine similarity over a temperature, and the
//! cross-entropy is taken over masked frames only.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seau_autodiff::{
    mix_seed, Adam, AdamConfig, AdamState, Checkpoint, GradBuffer, Graph, LrSchedule, Mode,
    ParamId, ParamStore, Real, Tensor, Var,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{config_err, Error, Result};
use crate::nn::{subsampled_len, Encoder, EncoderConfig, Init, GROUP_ENCODER, GROUP_EXTRACTOR};
use crate::train::{
    batch_indices, example_seed, restore_training, training_checkpoint, LogRecord, MetricsLog,
};

pub const GROUP_HEAD: &str = "head";
pub const GROUP_MASK: &str = "mask_emb";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    /// Probability that a frame starts a masked span.
    pub mask_prob: f64,
    pub span_len: usize,
}

impl MaskSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.mask_prob > 0.0 && self.mask_prob < 1.0) || self.span_len == 0 {
            return Err(config_err(format!(
                "mask_prob must lie in (0, 1) and span_len >= 1, got {} / {}",
                self.mask_prob, self.span_len
            )));
        }
        Ok(())
    }
}

/// Union of spans starting at independently chosen frames; redrawn with a
/// derived seed until at least one frame is masked.
pub fn sample_mask(len: usize, spec: &MaskSpec, seed: u64) -> Result<Vec<bool>> {
    spec.validate()?;
    if len < spec.span_len {
        return Err(Error::InputTooShort(format!(
            "{len} frames cannot hold a span of {}",
            spec.span_len
        )));
    }
    for attempt in 0u64.. {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, attempt));
        let mut mask = vec![false; len];
        for start in 0..len {
            if rng.random_bool(spec.mask_prob) {
                let end = (start + spec.span_len).min(len);
                mask[start..end].iter_mut().for_each(|m| *m = true);
            }
        }
        if mask.iter().any(|&m| m) {
            return Ok(mask);
        }
    }
    unreachable!("mask sampling loops until non-empty")
}

/// `W` (model width to projection width), unit embeddings `E` and the
/// temperature.
#[derive(Clone, Debug)]
pub struct PredictionHead {
    pub proj: ParamId,
    pub embeddings: ParamId,
    pub temperature: f64,
}

impl PredictionHead {
    /// Logits `cos(W h_t, e_c) / tau` for every row of `hidden`.
    pub fn logits<R: Real>(&self, g: &mut Graph<'_, R>, hidden: Var) -> Result<Var> {
        let w = g.param(self.proj);
        let e = g.param(self.embeddings);
        let z = g.matmul(hidden, w)?;
        let sim = g.cosine_similarity(z, e)?;
        Ok(g.scale(sim, 1.0 / self.temperature)?)
    }
}

/// Probability of every unit for a single hidden vector.
pub fn unit_distribution(
    head: &PredictionHead,
    store: &ParamStore,
    hidden: &[f32],
) -> Result<Vec<f64>> {
    let wide = store.cast::<f64>();
    let mut g = Graph::new(&wide, Mode::Eval);
    let h = g.constant(Tensor::new(
        &[1, hidden.len()],
        hidden.iter().map(|&v| v as f64).collect(),
    )?)?;
    let logits = head.logits(&mut g, h)?;
    let p = g.softmax(logits, 1)?;
    Ok(g.value(p).data().to_vec())
}

/// Masked-frame cross-entropy; rows outside `mask` contribute nothing.
pub fn masked_prediction_loss<R: Real>(
    g: &mut Graph<'_, R>,
    logits: Var,
    targets: &[u16],
    mask: &[bool],
) -> Result<Var> {
    if !mask.iter().any(|&m| m) {
        return Err(config_err("masked prediction loss needs a non-empty mask"));
    }
    let t: Vec<usize> = targets.iter().map(|&u| u as usize).collect();
    Ok(g.cross_entropy(logits, &t, Some(mask))?)
}

#[derive(Clone, Debug)]
pub struct PretrainModel {
    pub encoder: Encoder,
    pub head: PredictionHead,
    pub mask_emb: ParamId,
    pub clusters: usize,
}

impl PretrainModel {
    pub fn new(
        store: &mut ParamStore,
        cfg: &EncoderConfig,
        clusters: usize,
        temperature: f64,
        extractor_grad_scale: f64,
        seed: u64,
    ) -> Result<Self> {
        if clusters < 2 {
            return Err(config_err("need at least 2 unit classes"));
        }
        if temperature <= 0.0 {
            return Err(config_err("temperature must be positive"));
        }
        let mut init = Init::new(seed);
        let gx = store.group(GROUP_EXTRACTOR);
        let ge = store.group(GROUP_ENCODER);
        let gh = store.group(GROUP_HEAD);
        let gm = store.group(GROUP_MASK);
        store.set_grad_scale(gx, extractor_grad_scale)?;
        let encoder = Encoder::new(store, gx, ge, cfg, &mut init)?;
        let bound = 1.0 / (cfg.model_dim as f64).sqrt();
        let proj = store.add(
            "head.proj",
            init.uniform(&[cfg.model_dim, cfg.projection_dim], bound),
            gh,
        )?;
        let embeddings = store.add(
            "head.embeddings",
            init.normal(&[clusters, cfg.projection_dim], 1.0),
            gh,
        )?;
        let mask_emb = store.add("mask_emb", init.uniform(&[cfg.model_dim], 1.0), gm)?;
        Ok(Self {
            encoder,
            head: PredictionHead {
                proj,
                embeddings,
                temperature,
            },
            mask_emb,
            clusters,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub warmup_steps: u64,
    pub peak_lr: f64,
    pub mask: MaskSpec,
    /// Weight of the mean-square penalty on subsampler activations.
    pub l2_penalty: f64,
    pub extractor_grad_scale: f64,
    pub temperature: f64,
    pub max_grad_norm: Option<f64>,
    pub log_interval: u64,
    /// 0 writes only the final checkpoint.
    pub checkpoint_interval: u64,
    pub seed: u64,
}

impl PretrainConfig {
    pub fn paper() -> Self {
        Self {
            steps: 400_000,
            batch_size: 8,
            warmup_steps: 8000,
            peak_lr: 5e-4,
            mask: MaskSpec {
                mask_prob: 0.08,
                span_len: 10,
            },
            l2_penalty: 1e-4,
            extractor_grad_scale: 0.1,
            temperature: 0.1,
            max_grad_norm: Some(5.0),
            log_interval: 100,
            checkpoint_interval: 10_000,
            seed: 0,
        }
    }

    pub fn toy() -> Self {
        Self {
            steps: 800,
            warmup_steps: 40,
            peak_lr: 2e-3,
            mask: MaskSpec {
                mask_prob: 0.12,
                span_len: 4,
            },
            log_interval: 10,
            checkpoint_interval: 0,
            ..Self::paper()
        }
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule::WarmupLinearDecay {
            warmup_steps: self.warmup_steps,
            peak_lr: self.peak_lr,
            total_steps: self.steps,
        }
    }
}

/// One pre-training utterance: normalized input features and its units.
#[derive(Clone, Debug)]
pub struct PretrainExample {
    pub id: String,
    pub features: Tensor<f32>,
    pub units: Vec<u16>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub loss: f64,
    pub masked_acc: f64,
    pub extractor_ms: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub store: ParamStore,
    pub model: PretrainModel,
    pub history: Vec<StepMetrics>,
    pub checkpoint: Option<PathBuf>,
}

pub fn checkpoint_config(
    enc: &EncoderConfig,
    cfg: &PretrainConfig,
    clusters: usize,
) -> serde_json::Value {
    json!({"kind": "pretrain", "encoder": enc, "pretrain": cfg, "clusters": clusters})
}

/// Runs (or resumes) pre-training. With `out_dir`, metrics go to
/// `metrics.jsonl` and checkpoints to `step_<n>.ckpt` / `final.ckpt`.
pub fn pretrain_loop(
    enc: &EncoderConfig,
    cfg: &PretrainConfig,
    clusters: usize,
    data: &[PretrainExample],
    out_dir: Option<&Path>,
    resume: Option<&Checkpoint>,
) -> Result<PretrainOutcome> {
    if data.is_empty() {
        return Err(Error::InsufficientData("no pre-training utterances".into()));
    }
    if cfg.batch_size == 0 {
        return Err(config_err("batch_size must be positive"));
    }
    cfg.mask.validate()?;
    for ex in data {
        let t = subsampled_len(ex.features.rows());
        if ex.units.len() != t {
            return Err(Error::Data(format!(
                "utterance {}: {} units for {} subsampled frames",
                ex.id,
                ex.units.len(),
                t
            )));
        }
        if let Some(u) = ex.units.iter().find(|&&u| u as usize >= clusters) {
            return Err(Error::Data(format!(
                "utterance {}: unit {u} >= {clusters}",
                ex.id
            )));
        }
    }
    let mut store = ParamStore::new();
    let model = PretrainModel::new(
        &mut store,
        enc,
        clusters,
        cfg.temperature,
        cfg.extractor_grad_scale,
        mix_seed(cfg.seed, 0x1417),
    )?;
    let adam = Adam::new(AdamConfig {
        max_grad_norm: cfg.max_grad_norm,
        ..AdamConfig::default()
    });
    let mut state = AdamState::new(&store);
    let mut start = 0;
    if let Some(ckpt) = resume {
        start = restore_training(ckpt, &mut store, &mut state)?;
    }
    let schedule = cfg.schedule();
    let ckpt_cfg = checkpoint_config(enc, cfg, clusters);
    let mut log = MetricsLog::open(
        out_dir.map(|d| d.join("metrics.jsonl")).as_deref(),
        start > 0,
    )?;
    let mut grads = GradBuffer::new(&store);
    let mut history = Vec::new();
    let (mut acc_loss, mut acc_hit, mut acc_n, mut acc_steps) = (0.0, 0usize, 0usize, 0u64);
    let clock = Instant::now();
    for step in start..cfg.steps {
        let mut step_loss = 0.0;
        let (mut hits, mut masked) = (0usize, 0usize);
        let mut act = 0.0;
        for (slot, &i) in batch_indices(data.len(), cfg.batch_size, cfg.seed, step)
            .iter()
            .enumerate()
        {
            let ex = &data[i];
            let seed = example_seed(cfg.seed, step, slot);
            let mask = sample_mask(ex.units.len(), &cfg.mask, mix_seed(seed, 0x3a5c))?;
            let mut g = Graph::new(&store, Mode::Train);
            let x = model.encoder.features(&mut g, &ex.features)?;
            let out = model
                .encoder
                .forward(&mut g, x, Some((&mask, model.mask_emb)), seed)?;
            let logits = model.head.logits(&mut g, out.hidden)?;
            let ce = masked_prediction_loss(&mut g, logits, &ex.units, &mask)?;
            let sq = g.mul(out.extractor_out, out.extractor_out)?;
            let ms = g.mean(sq)?;
            act += g.value(ms).item() as f64;
            let pen = g.scale(ms, cfg.l2_penalty)?;
            let loss = g.add(ce, pen)?;
            step_loss += g.value(ce).item() as f64;
            let (h, m) = masked_hits(g.value(logits), &ex.units, &mask);
            hits += h;
            masked += m;
            let gr = g.backward(loss)?;
            grads.accumulate(&gr, 1.0 / cfg.batch_size as f64);
        }
        let lr = schedule.lr_at(step + 1);
        adam.step(&mut store, &mut grads, &mut state, lr)?;
        let b = cfg.batch_size as f64;
        history.push(StepMetrics {
            step: step + 1,
            loss: step_loss / b,
            masked_acc: hits as f64 / masked as f64,
            extractor_ms: act / b,
            lr,
        });
        acc_loss += step_loss / b;
        acc_hit += hits;
        acc_n += masked;
        acc_steps += 1;
        let done = step + 1;
        if cfg.log_interval > 0 && (done % cfg.log_interval == 0 || done == cfg.steps) {
            log.write(&LogRecord {
                step: done,
                loss: acc_loss / acc_steps as f64,
                masked_acc: Some(acc_hit as f64 / acc_n.max(1) as f64),
                lr,
                wall_ms: clock.elapsed().as_millis() as u64,
            })?;
            (acc_loss, acc_hit, acc_n, acc_steps) = (0.0, 0, 0, 0);
        }
        if let Some(dir) = out_dir {
            if cfg.checkpoint_interval > 0
                && done % cfg.checkpoint_interval == 0
                && done < cfg.steps
            {
                training_checkpoint(&store, &state, done, ckpt_cfg.clone())?
                    .save(dir.join(format!("step_{done}.ckpt")))?;
            }
        }
    }
    let checkpoint = match out_dir {
        Some(dir) => {
            let p = dir.join("final.ckpt");
            training_checkpoint(&store, &state, cfg.steps.max(start), ckpt_cfg)?.save(&p)?;
            Some(p)
        }
        None => None,
    };
    Ok(PretrainOutcome {
        store,
        model,
        history,
        checkpoint,
    })
}

/// (correct argmax predictions, masked frames).
fn masked_hits(logits: &Tensor<f32>, targets: &[u16], mask: &[bool]) -> (usize, usize) {
    let mut hits = 0;
    let mut n = 0;
    for (r, (&t, &m)) in targets.iter().zip(mask).enumerate() {
        if !m {
            continue;
        }
        n += 1;
        let row = logits.row(r);
        let best = (0..row.len()).fold(0, |b, k| if row[k] > row[b] { k } else { b });
        hits += usize::from(best == t as usize);
    }
    (hits, n)
}
