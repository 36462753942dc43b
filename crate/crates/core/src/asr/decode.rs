use seau_autodiff::{Graph, Mode, ParamStore, Tensor};

use crate::error::{config_err, Error, Result};
use crate::nn::{subsampled_len, AsrModel, BOS, EOS, PAD};

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Generated tokens, EOS excluded.
    pub tokens: Vec<usize>,
    /// Sum of token log-probabilities (EOS included when emitted).
    pub log_prob: f64,
    /// Scoring length: generated tokens plus EOS when emitted.
    pub length: usize,
    /// Stopped by the length limit rather than EOS.
    pub truncated: bool,
}

impl Hypothesis {
    /// Length-normalized log-probability.
    pub fn score(&self) -> f64 {
        self.log_prob / self.length.max(1) as f64
    }
}

fn log_softmax_last(logits: &Tensor<f32>) -> Vec<f64> {
    let row = logits.row(logits.rows() - 1);
    let max = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
    let lse = row
        .iter()
        .map(|&v| (v as f64 - max).exp())
        .sum::<f64>()
        .ln()
        + max;
    row.iter().map(|&v| v as f64 - lse).collect()
}

struct Scorer<'a> {
    model: &'a AsrModel,
    store: &'a ParamStore,
    memory: Tensor<f32>,
}

impl Scorer<'_> {
    /// Next-token log-probabilities after `prefix` (BOS-led). PAD and BOS are
    /// never proposed.
    fn next(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        let mut g = Graph::new(self.store, Mode::Eval);
        let m = g.constant(self.memory.clone())?;
        let logits = self.model.decoder.forward(&mut g, m, prefix, 0)?;
        let mut lp = log_softmax_last(g.value(logits));
        lp[PAD] = f64::NEG_INFINITY;
        lp[BOS] = f64::NEG_INFINITY;
        Ok(lp)
    }
}

fn max_len(model: &AsrModel, frames: usize) -> usize {
    (2 * subsampled_len(frames))
        .min(model.decoder.config.max_len - 1)
        .max(1)
}

fn scorer<'a>(
    model: &'a AsrModel,
    store: &'a ParamStore,
    features: &Tensor<f32>,
) -> Result<Scorer<'a>> {
    if features.rank() != 2 || features.rows() == 0 {
        return Err(Error::Data("cannot decode empty features".into()));
    }
    let mut g = Graph::new(store, Mode::Eval);
    let m = model.memory(&mut g, features, 0)?;
    Ok(Scorer {
        model,
        store,
        memory: g.value(m).clone(),
    })
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, k| if v[k] > v[b] { k } else { b })
}

fn greedy_from(s: &Scorer<'_>, limit: usize) -> Result<Hypothesis> {
    let mut prefix = vec![BOS];
    let mut log_prob = 0.0;
    while prefix.len() <= limit {
        let lp = s.next(&prefix)?;
        let k = argmax(&lp);
        log_prob += lp[k];
        if k == EOS {
            return Ok(Hypothesis {
                length: prefix.len(),
                tokens: prefix[1..].to_vec(),
                log_prob,
                truncated: false,
            });
        }
        prefix.push(k);
    }
    Ok(Hypothesis {
        length: prefix.len() - 1,
        tokens: prefix[1..].to_vec(),
        log_prob,
        truncated: true,
    })
}

/// Argmax decoding until EOS or `2 * T'` tokens.
pub fn greedy_decode(
    model: &AsrModel,
    store: &ParamStore,
    features: &Tensor<f32>,
) -> Result<Hypothesis> {
    let s = scorer(model, store, features)?;
    greedy_from(&s, max_len(model, features.rows()))
}

/// Length-normalized beam search. `beam == 1` is greedy decoding; for wider
/// beams the greedy hypothesis competes as well, so the result never scores
/// below it.
pub fn beam_decode(
    model: &AsrModel,
    store: &ParamStore,
    features: &Tensor<f32>,
    beam: usize,
) -> Result<Hypothesis> {
    if beam == 0 {
        return Err(config_err("beam must be at least 1"));
    }
    let s = scorer(model, store, features)?;
    let limit = max_len(model, features.rows());
    let greedy = greedy_from(&s, limit)?;
    if beam == 1 {
        return Ok(greedy);
    }
    let mut live: Vec<(Vec<usize>, f64)> = vec![(vec![BOS], 0.0)];
    let mut done: Vec<Hypothesis> = vec![greedy];
    for _ in 0..limit {
        let mut cand: Vec<(Vec<usize>, f64)> = Vec::new();
        for (prefix, lp0) in &live {
            let lp = s.next(prefix)?;
            let mut order: Vec<usize> = (0..lp.len()).filter(|&k| lp[k].is_finite()).collect();
            order.sort_by(|&a, &b| lp[b].total_cmp(&lp[a]).then(a.cmp(&b)));
            for &k in order.iter().take(beam) {
                let mut p = prefix.clone();
                p.push(k);
                cand.push((p, lp0 + lp[k]));
            }
        }
        cand.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        live.clear();
        for (p, lp) in cand.into_iter().take(beam) {
            if *p.last().unwrap_or(&BOS) == EOS {
                done.push(Hypothesis {
                    length: p.len() - 1,
                    tokens: p[1..p.len() - 1].to_vec(),
                    log_prob: lp,
                    truncated: false,
                });
            } else {
                live.push((p, lp));
            }
        }
        if live.is_empty() {
            break;
        }
    }
    for (p, lp) in live {
        done.push(Hypothesis {
            length: p.len() - 1,
            tokens: p[1..].to_vec(),
            log_prob: lp,
            truncated: true,
        });
    }
    Ok(done
        .into_iter()
        .fold(None::<Hypothesis>, |best, h| match best {
            Some(b) if b.score() >= h.score() => Some(b),
            _ => Some(h),
        })
        .expect("greedy hypothesis is always present"))
}
