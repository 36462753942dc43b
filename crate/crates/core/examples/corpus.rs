//! Generates a small synthetic corpus on disk and inspects one utterance.
//!
//! cargo run --release --example corpus -- [output dir]

use seau::config::ExperimentConfig;
use seau::corpus::{generate_corpus, load_split, CorpusManifest, SplitSizes};

fn main() -> seau::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "exp/example-corpus".into());
    let mut gen = ExperimentConfig::toy().corpus;
    gen.splits = SplitSizes {
        labeled: 20,
        unlabeled: 20,
        finetune: 0,
        test: 5,
    };
    let manifest = generate_corpus(&dir, 42, &gen)?;
    println!(
        "corpus in {dir}: {} utterances, inventory {}",
        manifest.utterance_count(),
        manifest.inventory_hash
    );
    for name in ["labeled", "unlabeled", "test"] {
        println!("  {name:<10} {}", manifest.split(name)?.len());
    }

    // reload from disk as a downstream stage would
    let manifest = CorpusManifest::load(&dir)?;
    let utt = load_split(&manifest, "test")?
        .next()
        .expect("test split is non-empty")?;
    println!("\n{} \"{}\"", utt.id, utt.transcript);
    println!("  signal {:?}", utt.signal_frames.shape());
    let runs = utt
        .phone_alignment
        .chunk_by(|a, b| a == b)
        .map(|r| format!("{}x{}", r[0], r.len()));
    println!("  phones {}", runs.collect::<Vec<_>>().join(" "));
    println!(
        "  rebuilt transcript \"{}\"",
        manifest
            .lexicon
            .transcript_from_alignment(&utt.phone_alignment, true)?
    );
    Ok(())
}
