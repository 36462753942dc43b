//! Runs every on-disk stage for a shrunken config, then runs again to show
//! that unchanged stages are skipped via the run ledger.

use seau::config::ExperimentConfig;
use seau::corpus::SplitSizes;
use seau::pipeline::{Pipeline, StageOutcome};

fn show(outcomes: &[StageOutcome]) {
    for o in outcomes {
        let state = if o.skipped { "skipped" } else { "ran" };
        println!(
            "  {:<20} {state:<8} {:>7} ms  {}",
            o.stage,
            o.record.wall_ms,
            &o.record.output_hash[..12]
        );
    }
}

fn main() -> seau::Result<()> {
    let mut cfg = ExperimentConfig::toy();
    cfg.name = "example-pipeline".into();
    cfg.corpus.splits = SplitSizes {
        labeled: 60,
        unlabeled: 60,
        finetune: 0,
        test: 10,
    };
    cfg.supervised.epochs = 3;
    cfg.finetune.epochs = 2;
    cfg.pretrain.steps = 30;
    cfg.quantizer.clusters = 16;

    let pipeline = Pipeline::new(cfg.clone())?;
    println!("first run in {}", cfg.experiment_dir().display());
    show(&pipeline.run_all()?);
    println!("second run");
    show(&pipeline.run_all()?);

    cfg.pretrain.steps = 40;
    println!("after changing pretrain.steps");
    show(&Pipeline::new(cfg)?.run_all()?);
    Ok(())
}
