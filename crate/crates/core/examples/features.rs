//! Log-mel filterbank and MFCC features for a rendered utterance, plus a
//! corpus-level mean/variance normalizer.

use seau::config::ExperimentConfig;
use seau::corpus::{render_utterance, utterance_id, Lexicon, PhoneInventory};
use seau::frontend::{fbank, mfcc, Normalizer};
use seau_autodiff::{mix_seed, Tensor};

fn column_stats(x: &Tensor<f32>, col: usize) -> (f64, f64) {
    let v: Vec<f64> = (0..x.rows()).map(|r| x.row(r)[col] as f64).collect();
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / v.len() as f64;
    (mean, var.sqrt())
}

fn main() -> seau::Result<()> {
    let cfg = ExperimentConfig::toy();
    let inventory = PhoneInventory::for_config(&cfg.corpus)?;
    let lexicon = Lexicon::generate(&cfg.corpus)?;
    let utts: Vec<_> = (0..50)
        .map(|i| {
            render_utterance(
                &utterance_id(i),
                mix_seed(3, i as u64),
                &cfg.corpus,
                &inventory,
                &lexicon,
            )
        })
        .collect::<seau::Result<_>>()?;

    let fb: Vec<_> = utts
        .iter()
        .map(|u| fbank(&u.signal_frames, cfg.frontend.n_mels))
        .collect::<seau::Result<_>>()?;
    let first = &fb[0];
    let cep = mfcc(first, cfg.frontend.n_ceps, cfg.frontend.deltas)?;
    println!("signal  {:?}", utts[0].signal_frames.shape());
    println!("fbank   {:?} ({:?})", first.frames.shape(), first.kind);
    println!(
        "mfcc    {:?} ({:?}, with deltas: {})",
        cep.frames.shape(),
        cep.kind,
        cfg.frontend.deltas
    );

    let norm = Normalizer::fit(fb.iter().map(|f| &f.frames))?;
    let normed = norm.apply(first)?;
    for col in [0, cfg.frontend.n_mels / 2, cfg.frontend.n_mels - 1] {
        let (m0, s0) = column_stats(&first.frames, col);
        let (m1, s1) = column_stats(&normed.frames, col);
        println!("mel {col:>2}: mean {m0:7.3} sd {s0:6.3} -> mean {m1:6.3} sd {s1:5.3}");
    }
    Ok(())
}
