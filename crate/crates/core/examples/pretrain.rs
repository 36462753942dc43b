//! Masked-prediction pre-training on MFCC-derived units, then a check of
//! how well the pre-trained encoder's own layers cluster into phones.

use seau::config::ExperimentConfig;
use seau::experiment::{featurize, mfcc_targets, pretrain_examples, seau_targets};
use seau::frontend::Normalizer;
use seau::pretrain::{pretrain_loop, PretrainConfig};
use seau::study::render_range;

fn main() -> seau::Result<()> {
    let cfg = ExperimentConfig::toy();
    let steps: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(200);
    let feats = featurize(&render_range(&cfg.corpus, 9, 0..300)?, &cfg.frontend)?;
    let phones = feats.unit_alignments();
    let targets = mfcc_targets(
        &feats.mfcc,
        &phones,
        &cfg.quantizer.kmeans(cfg.quantizer.clusters, 1),
    )?;
    println!(
        "MFCC units: C={} PNMI {:.3}",
        cfg.quantizer.clusters, targets.quality.pnmi
    );

    let norm = Normalizer::fit(feats.fbank.iter())?;
    let inputs = feats.normalized(&norm)?;
    let data = pretrain_examples(&feats.ids, &inputs, &targets.units);
    let pcfg = PretrainConfig {
        steps,
        log_interval: 0,
        ..cfg.pretrain.clone()
    };
    let out = pretrain_loop(
        &cfg.encoder,
        &pcfg,
        cfg.quantizer.clusters,
        &data,
        None,
        None,
    )?;
    for m in out.history.iter().step_by((steps as usize / 10).max(1)) {
        println!(
            "step {:>5}  loss {:.3}  masked acc {:.3}  lr {:.2e}",
            m.step, m.loss, m.masked_acc, m.lr
        );
    }

    let layer = cfg.encoder.n_blocks;
    let own = seau_targets(
        &out.store,
        &out.model.encoder,
        layer,
        &inputs,
        &phones,
        &cfg.quantizer.kmeans(cfg.quantizer.clusters, 2),
    )?;
    println!("re-clustered block {layer}: PNMI {:.3}", own.quality.pnmi);
    Ok(())
}
