//! Trains a small attention encoder-decoder recognizer from scratch and
//! scores greedy and beam decoding on held-out utterances.

use seau::asr::{train_asr, AsrInit, AsrTrainConfig, BpeModel};
use seau::config::ExperimentConfig;
use seau::experiment::{asr_examples, decode_and_score, featurize};
use seau::frontend::Normalizer;
use seau::study::render_range;

fn main() -> seau::Result<()> {
    let cfg = ExperimentConfig::toy();
    let epochs: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(cfg.supervised.epochs);
    let train = featurize(&render_range(&cfg.corpus, 4, 0..400)?, &cfg.frontend)?;
    let test = featurize(&render_range(&cfg.corpus, 4, 400..440)?, &cfg.frontend)?;

    let bpe = BpeModel::train(train.transcripts.iter().map(String::as_str), cfg.bpe.merges)?;
    println!(
        "vocabulary {} tokens; \"{}\" -> {:?}",
        bpe.vocab_size(),
        train.transcripts[0],
        bpe.encode(&train.transcripts[0])
    );

    let norm = Normalizer::fit(train.fbank.iter())?;
    let data = asr_examples(
        &train.ids,
        &train.normalized(&norm)?,
        &train.transcripts,
        &bpe,
    );
    let tcfg = AsrTrainConfig {
        epochs,
        decay_epochs: epochs * 3 / 4,
        ..cfg.supervised.clone()
    };
    let out = train_asr(
        &cfg.encoder,
        &cfg.decoder_for(bpe.vocab_size()),
        &tcfg,
        &data,
        AsrInit::Scratch,
        None,
    )?;
    let per_epoch = out.losses.len() / epochs as usize;
    for (e, chunk) in out.losses.chunks(per_epoch.max(1)).enumerate() {
        println!(
            "epoch {:>2}  loss {:.3}",
            e + 1,
            chunk.iter().sum::<f64>() / chunk.len() as f64
        );
    }

    let inputs = test.normalized(&norm)?;
    for beam in [1, 4] {
        let (hyps, report) = decode_and_score(
            &out.model,
            &out.store,
            &bpe,
            &inputs,
            &test.transcripts,
            beam,
        )?;
        println!(
            "\nbeam {beam}: WER {:.3} ({} sub, {} del, {} ins over {} words)",
            report.wer,
            report.substitutions,
            report.deletions,
            report.insertions,
            report.n_ref_words
        );
        for (h, r) in hyps.iter().zip(&test.transcripts).take(3) {
            println!("  ref  {r}\n  hyp  {h}");
        }
    }
    Ok(())
}
