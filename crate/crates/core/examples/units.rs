//! Discovers acoustic units by k-means over unit-rate MFCC frames and
//! scores them against the phone alignment.

use seau::config::ExperimentConfig;
use seau::experiment::{featurize, mfcc_targets};
use seau::study::render_range;

fn main() -> seau::Result<()> {
    let cfg = ExperimentConfig::toy();
    let utts = render_range(&cfg.corpus, 5, 0..200)?;
    let feats = featurize(&utts, &cfg.frontend)?;
    let phones = feats.unit_alignments();
    println!("{:>4} {:>7} {:>8} {:>8}", "C", "PNMI", "c.pur", "p.pur");
    for clusters in [8, 16, 32, 64] {
        let t = mfcc_targets(&feats.mfcc, &phones, &cfg.quantizer.kmeans(clusters, 1))?;
        let q = &t.quality;
        println!(
            "{clusters:>4} {:>7.3} {:>8.3} {:>8.3}",
            q.pnmi, q.cluster_purity, q.phone_purity
        );
    }
    let t = mfcc_targets(&feats.mfcc, &phones, &cfg.quantizer.kmeans(16, 1))?;
    let h = &t.codebook.inertia_history;
    println!(
        "\nC=16 inertia over {} iterations: {:.1} -> {:.1}",
        h.len(),
        h[0],
        h[h.len() - 1]
    );
    println!("units  {:?}", t.units[0]);
    println!("phones {:?}", phones[0]);
    Ok(())
}
