//! Pieces shared by the training loops: deterministic batching, resumable
//! checkpoints with optimizer state, and the JSON-lines metrics log.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seau_autodiff::{mix_seed, AdamState, Checkpoint, ParamStore, Tensor};
use serde::Serialize;

use crate::error::{Error, Result};

/// Example indices of batch `step`: consecutive slices of per-epoch
/// permutations, so the batch is a pure function of `(seed, step)`.
pub fn batch_indices(n: usize, batch: usize, seed: u64, step: u64) -> Vec<usize> {
    let mut out = Vec::with_capacity(batch);
    let mut cached: Option<(u64, Vec<usize>)> = None;
    for k in 0..batch as u64 {
        let global = step * batch as u64 + k;
        let (epoch, pos) = (global / n as u64, (global % n as u64) as usize);
        if cached.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, epoch)));
            cached = Some((epoch, perm));
        }
        out.push(cached.as_ref().map(|(_, p)| p[pos]).unwrap_or(0));
    }
    out
}

/// Per-example seed for dropout, masking and augmentation.
pub fn example_seed(seed: u64, step: u64, slot: usize) -> u64 {
    mix_seed(mix_seed(seed, step), slot as u64)
}

const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";

/// Parameters, Adam moments and the step counter in one checkpoint.
pub fn training_checkpoint(
    store: &ParamStore,
    adam: &AdamState,
    step: u64,
    mut config: serde_json::Value,
) -> Result<Checkpoint> {
    if let Some(obj) = config.as_object_mut() {
        obj.insert("step".into(), step.into());
        obj.insert("adam_step".into(), adam.step.into());
    }
    let mut ckpt = Checkpoint::from_store(store, config);
    for (id, e) in store.entries() {
        let n = e.value.numel();
        ckpt.push(
            format!("{ADAM_M}{}", e.name),
            Tensor::new(&[n], adam.m[id.0].clone())?,
        );
        ckpt.push(
            format!("{ADAM_V}{}", e.name),
            Tensor::new(&[n], adam.v[id.0].clone())?,
        );
    }
    Ok(ckpt)
}

/// Copies every store parameter from `ckpt` by name (all-or-nothing).
pub fn restore_params(ckpt: &Checkpoint, store: &mut ParamStore) -> Result<()> {
    let prefixes: std::collections::BTreeSet<String> = store
        .entries()
        .map(|(_, e)| e.name.split('.').next().unwrap_or("").to_string())
        .collect();
    let mut staged = store.clone();
    for p in prefixes {
        let prefix = if staged.id(&p).is_some() {
            p
        } else {
            format!("{p}.")
        };
        ckpt.load_into(&mut staged, &prefix)?;
    }
    *store = staged;
    Ok(())
}

/// Restores parameters and optimizer state; returns the step to resume at.
pub fn restore_training(
    ckpt: &Checkpoint,
    store: &mut ParamStore,
    adam: &mut AdamState,
) -> Result<u64> {
    restore_params(ckpt, store)?;
    for (id, e) in store.entries() {
        let m = ckpt.get(&format!("{ADAM_M}{}", e.name));
        let v = ckpt.get(&format!("{ADAM_V}{}", e.name));
        match (m, v) {
            (Some(m), Some(v)) if m.numel() == e.value.numel() && v.numel() == e.value.numel() => {
                adam.m[id.0] = m.data().to_vec();
                adam.v[id.0] = v.data().to_vec();
            }
            _ => {
                return Err(Error::Data(format!(
                    "checkpoint lacks optimizer state for {}",
                    e.name
                )))
            }
        }
    }
    let field = |k: &str| {
        ckpt.config
            .get(k)
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::Data(format!("checkpoint config lacks `{k}`")))
    };
    adam.step = field("adam_step")?;
    field("step")
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogRecord {
    pub step: u64,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub masked_acc: Option<f64>,
    pub lr: f64,
    pub wall_ms: u64,
}

/// Appends one JSON object per line.
pub struct MetricsLog {
    file: Option<std::io::BufWriter<std::fs::File>>,
}

impl MetricsLog {
    pub fn open(path: Option<&Path>, append: bool) -> Result<Self> {
        let file = match path {
            Some(p) => {
                if let Some(dir) = p.parent() {
                    std::fs::create_dir_all(dir)?;
                }
                let f = std::fs::OpenOptions::new()
                    .create(true)
                    .write(true)
                    .append(append)
                    .truncate(!append)
                    .open(p)?;
                Some(std::io::BufWriter::new(f))
            }
            None => None,
        };
        Ok(Self { file })
    }

    pub fn write(&mut self, record: &LogRecord) -> Result<()> {
        if let Some(f) = &mut self.file {
            serde_json::to_writer(&mut *f, record)?;
            f.write_all(b"\n")?;
            f.flush()?;
        }
        Ok(())
    }
}
