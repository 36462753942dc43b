use std::path::{Path, PathBuf};
use std::time::Instant;

use seau_autodiff::{
    mix_seed, Adam, AdamConfig, AdamState, Checkpoint, GradBuffer, Graph, LrSchedule, Mode,
    ParamStore,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{config_err, Error, Result};
use crate::nn::{
    AsrModel, DecoderConfig, EncoderConfig, SpecAugmentConfig, BOS, EOS, GROUP_EXTRACTOR,
};
use crate::train::{
    batch_indices, example_seed, restore_params, restore_training, training_checkpoint, LogRecord,
    MetricsLog,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsrTrainConfig {
    pub epochs: u64,
    pub batch_size: usize,
    pub warmup_steps: u64,
    pub peak_lr: f64,
    /// Epoch at which the linear decay reaches half the peak; halving per
    /// epoch afterwards.
    pub decay_epochs: u64,
    pub specaugment: SpecAugmentConfig,
    /// Freeze the subsampler when initializing from a pre-trained encoder.
    pub freeze_extractor: bool,
    pub max_grad_norm: Option<f64>,
    pub log_interval: u64,
    pub seed: u64,
}

impl AsrTrainConfig {
    /// Fine-tuning schedule: warm up to 7e-4, hold until epoch 15, halve
    /// every epoch after.
    pub fn paper() -> Self {
        Self {
            epochs: 20,
            batch_size: 8,
            warmup_steps: 8000,
            peak_lr: 7e-4,
            decay_epochs: 15,
            specaugment: SpecAugmentConfig::paper(),
            freeze_extractor: true,
            max_grad_norm: Some(5.0),
            log_interval: 100,
            seed: 0,
        }
    }

    /// Supervised model for unit extraction: 15 epochs.
    pub fn paper_supervised() -> Self {
        Self {
            epochs: 15,
            ..Self::paper()
        }
    }

    pub fn toy() -> Self {
        Self {
            epochs: 12,
            warmup_steps: 40,
            peak_lr: 2e-3,
            decay_epochs: 9,
            specaugment: SpecAugmentConfig {
                freq_mask: 8,
                time_mask: 10,
                n_freq_masks: 1,
                n_time_masks: 1,
            },
            log_interval: 10,
            ..Self::paper()
        }
    }

    pub fn toy_supervised() -> Self {
        Self {
            epochs: 30,
            peak_lr: 7e-4,
            decay_epochs: 22,
            ..Self::toy()
        }
    }

    pub fn steps_per_epoch(&self, n_examples: usize) -> u64 {
        (n_examples.div_ceil(self.batch_size.max(1))) as u64
    }

    pub fn total_steps(&self, n_examples: usize) -> u64 {
        self.epochs * self.steps_per_epoch(n_examples)
    }

    pub fn schedule(&self, n_examples: usize) -> LrSchedule {
        LrSchedule::WarmupHoldHalve {
            warmup_steps: self.warmup_steps,
            peak_lr: self.peak_lr,
            steps_per_epoch: self.steps_per_epoch(n_examples),
            decay_epochs: self.decay_epochs,
            total_epochs: self.epochs,
        }
    }
}

/// Normalized features and BPE token ids (without BOS/EOS).
#[derive(Clone, Debug)]
pub struct AsrExample {
    pub id: String,
    pub features: seau_autodiff::Tensor<f32>,
    pub tokens: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct AsrOutcome {
    pub store: ParamStore,
    pub model: AsrModel,
    /// Mean token cross-entropy per step.
    pub losses: Vec<f64>,
    pub skipped_empty: usize,
    pub checkpoint: Option<PathBuf>,
}

pub fn asr_checkpoint_config(
    enc: &EncoderConfig,
    dec: &DecoderConfig,
    cfg: &AsrTrainConfig,
) -> serde_json::Value {
    json!({"kind": "asr", "encoder": enc, "decoder": dec, "train": cfg})
}

fn config_field<T: serde::de::DeserializeOwned>(ckpt: &Checkpoint, key: &str) -> Result<T> {
    let v = ckpt
        .config
        .get(key)
        .ok_or_else(|| Error::Data(format!("checkpoint config lacks `{key}`")))?;
    Ok(serde_json::from_value(v.clone())?)
}

/// Rebuilds an ASR model from a checkpoint written by [`train_asr`].
pub fn load_asr(ckpt: &Checkpoint) -> Result<(ParamStore, AsrModel)> {
    let enc: EncoderConfig = config_field(ckpt, "encoder")?;
    let dec: DecoderConfig = config_field(ckpt, "decoder")?;
    let mut store = ParamStore::new();
    let model = AsrModel::new(&mut store, &enc, &dec, 0)?;
    restore_params(ckpt, &mut store)?;
    Ok((store, model))
}

/// Where a training run starts from.
pub enum AsrInit<'a> {
    Scratch,
    /// Copy `extractor.*` and `encoder.*` from a pre-trained checkpoint.
    Pretrained(&'a Checkpoint),
    /// Continue an interrupted run of this same configuration.
    Resume(&'a Checkpoint),
}

/// Teacher-forced encoder-decoder training. The batch loss is the mean
/// token cross-entropy; utterances with empty transcripts are skipped.
pub fn train_asr(
    enc: &EncoderConfig,
    dec: &DecoderConfig,
    cfg: &AsrTrainConfig,
    data: &[AsrExample],
    init: AsrInit<'_>,
    out_dir: Option<&Path>,
) -> Result<AsrOutcome> {
    if cfg.batch_size == 0 {
        return Err(config_err("batch_size must be positive"));
    }
    cfg.specaugment.validate(enc.input_dim)?;
    let usable: Vec<&AsrExample> = data.iter().filter(|e| !e.tokens.is_empty()).collect();
    let skipped_empty = data.len() - usable.len();
    if usable.is_empty() {
        return Err(Error::InsufficientData(
            "no labeled utterances with transcripts".into(),
        ));
    }
    let mut store = ParamStore::new();
    let model = AsrModel::new(&mut store, enc, dec, mix_seed(cfg.seed, 0xa5))?;
    let mut state = AdamState::new(&store);
    let mut start = 0;
    match init {
        AsrInit::Scratch => {}
        AsrInit::Pretrained(ckpt) => {
            let mut staged = store.clone();
            ckpt.load_into(&mut staged, "extractor.")?;
            ckpt.load_into(&mut staged, "encoder.")?;
            store = staged;
            if cfg.freeze_extractor {
                let gx = store.group(GROUP_EXTRACTOR);
                store.set_frozen(gx, true);
            }
        }
        AsrInit::Resume(ckpt) => {
            start = restore_training(ckpt, &mut store, &mut state)?;
            if ckpt
                .config
                .get("frozen_extractor")
                .and_then(|v| v.as_bool())
                == Some(true)
            {
                let gx = store.group(GROUP_EXTRACTOR);
                store.set_frozen(gx, true);
            }
        }
    }
    let frozen = store
        .find_group(GROUP_EXTRACTOR)
        .is_some_and(|g| store.group_info(g).frozen);
    let mut ckpt_cfg = asr_checkpoint_config(enc, dec, cfg);
    ckpt_cfg["frozen_extractor"] = frozen.into();
    let adam = Adam::new(AdamConfig {
        max_grad_norm: cfg.max_grad_norm,
        ..AdamConfig::default()
    });
    let total = cfg.total_steps(usable.len());
    let schedule = cfg.schedule(usable.len());
    let mut log = MetricsLog::open(
        out_dir.map(|d| d.join("metrics.jsonl")).as_deref(),
        start > 0,
    )?;
    let mut grads = GradBuffer::new(&store);
    let mut losses = Vec::new();
    let clock = Instant::now();
    let (mut acc, mut acc_n) = (0.0, 0u64);
    for step in start..total {
        let idx = batch_indices(usable.len(), cfg.batch_size, cfg.seed, step);
        let n_tokens: usize = idx.iter().map(|&i| usable[i].tokens.len() + 1).sum();
        let mut step_loss = 0.0;
        for (slot, &i) in idx.iter().enumerate() {
            let ex = usable[i];
            let seed = example_seed(cfg.seed, step, slot);
            let (feats, _) = cfg.specaugment.apply(&ex.features, mix_seed(seed, 0x5a))?;
            let (inp, tgt) = teacher_forcing(&ex.tokens);
            let mut g = Graph::new(&store, Mode::Train);
            let logits = model.logits(&mut g, &feats, &inp, seed)?;
            let loss = g.cross_entropy(logits, &tgt, None)?;
            let w = tgt.len() as f64 / n_tokens as f64;
            step_loss += w * g.value(loss).item() as f64;
            let gr = g.backward(loss)?;
            grads.accumulate(&gr, w);
        }
        let lr = schedule.lr_at(step + 1);
        adam.step(&mut store, &mut grads, &mut state, lr)?;
        losses.push(step_loss);
        acc += step_loss;
        acc_n += 1;
        let done = step + 1;
        if cfg.log_interval > 0 && (done % cfg.log_interval == 0 || done == total) {
            log.write(&LogRecord {
                step: done,
                loss: acc / acc_n as f64,
                masked_acc: None,
                lr,
                wall_ms: clock.elapsed().as_millis() as u64,
            })?;
            (acc, acc_n) = (0.0, 0);
        }
    }
    let checkpoint = match out_dir {
        Some(dir) => {
            let p = dir.join("final.ckpt");
            training_checkpoint(&store, &state, total.max(start), ckpt_cfg)?.save(&p)?;
            Some(p)
        }
        None => None,
    };
    Ok(AsrOutcome {
        store,
        model,
        losses,
        skipped_empty,
        checkpoint,
    })
}

/// Decoder input (BOS + tokens) and target (tokens + EOS).
pub fn teacher_forcing(tokens: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let inp = std::iter::once(BOS).chain(tokens.iter().copied()).collect();
    let tgt = tokens.iter().copied().chain(std::iter::once(EOS)).collect();
    (inp, tgt)
}

/// Mean token cross-entropy in evaluation mode.
pub fn evaluate_loss(model: &AsrModel, store: &ParamStore, data: &[AsrExample]) -> Result<f64> {
    let (mut total, mut n) = (0.0, 0usize);
    for ex in data.iter().filter(|e| !e.tokens.is_empty()) {
        let (inp, tgt) = teacher_forcing(&ex.tokens);
        let mut g = Graph::new(store, Mode::Eval);
        let logits = model.logits(&mut g, &ex.features, &inp, 0)?;
        let loss = g.cross_entropy(logits, &tgt, None)?;
        total += g.value(loss).item() as f64 * tgt.len() as f64;
        n += tgt.len();
    }
    if n == 0 {
        return Err(Error::InsufficientData("no utterances to evaluate".into()));
    }
    Ok(total / n as f64)
}
