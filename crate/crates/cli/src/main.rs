use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use seau::config::ExperimentConfig;
use seau::nn::Preset;
use seau::pipeline::{FinetuneInit, Pipeline, StageOutcome, UnitSource};
use seau::study::{ablation_cells, run_ablation, write_ablation_report, Study};
use seau::Error;

#[derive(Parser)]
#[command(
    name = "seau",
    version,
    about = "Supervision-enhanced acoustic units: stage runner"
)]
struct Cli {
    /// Experiment config (TOML); omitted sections come from its preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Preset used when no config file is given.
    #[arg(long, global = true, default_value = "toy")]
    preset: String,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    name: Option<String>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Rerun stages whose inputs are unchanged.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Source {
    Mfcc,
    Seau,
}

impl From<Source> for UnitSource {
    fn from(s: Source) -> Self {
        match s {
            Source::Mfcc => UnitSource::Mfcc,
            Source::Seau => UnitSource::Seau,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Init {
    None,
    Checkpoint,
}

#[derive(Subcommand)]
enum Command {
    /// Print the resolved config as TOML.
    ShowConfig,
    CorpusGen,
    Featurize,
    TrainSupervised,
    ExtractUnits {
        #[arg(long, value_enum)]
        source: Source,
        #[arg(long)]
        layer: Option<usize>,
        #[arg(long)]
        clusters: Option<usize>,
    },
    Pretrain {
        #[arg(long, value_enum, default_value = "seau")]
        units: Source,
    },
    Finetune {
        #[arg(long, value_enum)]
        init: Init,
        /// Units of the pre-trained checkpoint used with `--init checkpoint`.
        #[arg(long, value_enum, default_value = "seau")]
        units: Source,
    },
    Decode {
        /// Fine-tuning run: scratch, from-mfcc or from-seau.
        #[arg(long, default_value = "from-seau")]
        run: String,
    },
    Score {
        #[arg(long, default_value = "from-seau")]
        run: String,
    },
    /// Every stage in order.
    Run,
    /// In-memory SEAU / MFCC / scratch comparison for each seed.
    Compare {
        #[arg(long, value_delimiter = ',', default_value = "1")]
        seeds: Vec<u64>,
    },
    /// Supervised-data fraction x domain x cluster-count matrix.
    Ablation {
        #[arg(long, value_delimiter = ',', default_value = "1")]
        seeds: Vec<u64>,
    },
}

fn finetune_init(init: Init, units: Source) -> FinetuneInit {
    match init {
        Init::None => FinetuneInit::None,
        Init::Checkpoint => FinetuneInit::Pretrained(units.into()),
    }
}

fn parse_run(run: &str) -> Result<FinetuneInit, Error> {
    match run {
        "scratch" => Ok(FinetuneInit::None),
        "from-mfcc" => Ok(FinetuneInit::Pretrained(UnitSource::Mfcc)),
        "from-seau" => Ok(FinetuneInit::Pretrained(UnitSource::Seau)),
        _ => Err(Error::Config(format!(
            "unknown run `{run}` (scratch, from-mfcc, from-seau)"
        ))),
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::preset(cli.preset.parse::<Preset>()?),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(n) = &cli.name {
        cfg.name = n.clone();
    }
    if let Some(d) = &cli.output_dir {
        cfg.output_dir = d.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn report(o: &StageOutcome) {
    let what = if o.skipped {
        "skipped (unchanged)"
    } else {
        "ok"
    };
    println!("{:<22} {what:<20} {:>8} ms", o.stage, o.record.wall_ms);
}

fn run(cli: Cli) -> Result<(), Error> {
    let cfg = load_config(&cli)?;
    let mut p = Pipeline::new(cfg.clone())?;
    p.force = cli.force;
    let outcome = match cli.command {
        Command::ShowConfig => {
            print!("{}", cfg.to_toml()?);
            return Ok(());
        }
        Command::CorpusGen => p.corpus_gen()?,
        Command::Featurize => p.featurize()?,
        Command::TrainSupervised => p.train_supervised()?,
        Command::ExtractUnits {
            source,
            layer,
            clusters,
        } => p.extract_units(source.into(), layer, clusters)?,
        Command::Pretrain { units } => p.pretrain(units.into())?,
        Command::Finetune { init, units } => p.finetune(&finetune_init(init, units))?,
        Command::Decode { run } => p.decode(&parse_run(&run)?)?,
        Command::Score { run } => {
            let init = parse_run(&run)?;
            let o = p.score(&init)?;
            let path = p
                .stage_dir(&format!("score/{}", init.tag()))
                .join("score.json");
            println!("{}", std::fs::read_to_string(path)?.trim());
            o
        }
        Command::Run => {
            for o in p.run_all()? {
                report(&o);
            }
            return Ok(());
        }
        Command::Compare { seeds } => {
            for seed in seeds {
                let r = Study::new(&cfg, seed)?.comparison()?;
                println!("{}", serde_json::to_string(&r)?);
            }
            return Ok(());
        }
        Command::Ablation { seeds } => {
            let rows = run_ablation(&cfg, &seeds, &ablation_cells(&cfg))?;
            let dir = cfg.experiment_dir().join("ablation");
            write_ablation_report(&dir, "cells", &rows)?;
            println!("{} cells written to {}", rows.len(), dir.display());
            return Ok(());
        }
    };
    report(&outcome);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
