//! The unit comparison on the toy corpus: supervised-encoder units against
//! MFCC units, by phone information and by the WER of recognizers
//! fine-tuned from each pre-trained encoder. Pass `ablation` to also run the
//! labeled-fraction x domain x cluster-count matrix.
//!
//! cargo run --release --example study -- [seed] [ablation]

use seau::config::ExperimentConfig;
use seau::study::{ablation_cells, run_ablation, write_ablation_report, Study};

fn main() -> seau::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed = args.iter().find_map(|a| a.parse().ok()).unwrap_or(1);
    let cfg = ExperimentConfig::toy();

    let r = Study::new(&cfg, seed)?.comparison()?;
    println!(
        "seed {seed}, C={}, block {} ({:.0} s)",
        r.clusters, r.layer, r.wall_s
    );
    println!("  PNMI  seau {:.3}  mfcc {:.3}", r.pnmi_seau, r.pnmi_mfcc);
    println!(
        "  WER   seau {:.3}  mfcc {:.3}  scratch {:.3}",
        r.wer_seau, r.wer_mfcc, r.wer_scratch
    );

    if args.iter().any(|a| a == "ablation") {
        let rows = run_ablation(&cfg, &[seed], &ablation_cells(&cfg))?;
        for c in &rows {
            let wer = c.wer.map_or("-".into(), |w| format!("{w:.3}"));
            let pnmi = c.pnmi.map_or("-".into(), |p| format!("{p:.3}"));
            println!(
                "  {:>5.2} {:<10} C={:<3} PNMI {pnmi}  WER {wer}",
                c.fraction,
                c.domain.label(),
                c.clusters
            );
        }
        let dir = cfg.experiment_dir().join("ablation");
        write_ablation_report(&dir, "cells", &rows)?;
        println!("report written to {}", dir.display());
    }
    Ok(())
}
