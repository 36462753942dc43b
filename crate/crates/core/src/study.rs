//! Desk-scale comparisons run in memory: SEAU units against MFCC units,
//! pre-trained initialization against training from scratch, and the
//! supervised-data / domain / cluster-count ablation matrix.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use seau_autodiff::{mix_seed, Checkpoint, ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::asr::{train_asr, AsrInit, AsrTrainConfig, BpeModel};
use crate::config::{named_seed, ExperimentConfig};
use crate::corpus::{
    render_utterance, utterance_id, GeneratorConfig, Lexicon, PhoneInventory, Utterance,
};
use crate::error::{Error, Result};
use crate::experiment::{
    asr_examples, decode_and_score, featurize, mfcc_targets, pretrain_examples, seau_targets,
    snapshot, Featurized, UnitTargets,
};
use crate::format::write_atomic;
use crate::frontend::Normalizer;
use crate::nn::AsrModel;
use crate::pretrain::pretrain_loop;

/// Renders utterances `range` of a corpus without touching the disk.
pub fn render_range(
    config: &GeneratorConfig,
    seed: u64,
    range: std::ops::Range<usize>,
) -> Result<Vec<Utterance>> {
    config.validate()?;
    let inventory = PhoneInventory::for_config(config)?;
    let lexicon = Lexicon::generate(config)?;
    range
        .map(|i| {
            render_utterance(
                &utterance_id(i),
                mix_seed(seed, i as u64),
                config,
                &inventory,
                &lexicon,
            )
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    InDomain,
    OutDomain,
}

impl Domain {
    pub fn label(self) -> &'static str {
        match self {
            Domain::InDomain => "in-domain",
            Domain::OutDomain => "out-domain",
        }
    }
}

/// Features of one language's labeled data with its own normalizer and
/// tokenizer.
#[derive(Clone, Debug)]
pub struct LabeledSet {
    pub features: Featurized,
    pub normalizer: Normalizer,
    pub inputs: Vec<Tensor<f32>>,
    pub bpe: BpeModel,
    pub inventory_hash: String,
}

#[derive(Clone, Debug)]
pub struct SupervisedModel {
    pub store: ParamStore,
    pub model: AsrModel,
    pub normalizer: Normalizer,
    pub final_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub seed: u64,
    pub clusters: usize,
    pub layer: usize,
    pub pnmi_seau: f64,
    pub pnmi_mfcc: f64,
    pub wer_scratch: f64,
    pub wer_seau: f64,
    pub wer_mfcc: f64,
    pub config_hash: String,
    pub wall_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub fraction: f64,
    pub domain: Domain,
    pub clusters: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub fraction: f64,
    pub domain: Domain,
    pub clusters: usize,
    pub seed: u64,
    pub pnmi: Option<f64>,
    pub cluster_purity: Option<f64>,
    pub phone_purity: Option<f64>,
    pub wer: Option<f64>,
    pub config_hash: String,
    pub error: Option<String>,
}

/// Shared data and cached models for one seed of a study.
pub struct Study<'c> {
    pub cfg: &'c ExperimentConfig,
    pub seed: u64,
    pub labeled: LabeledSet,
    pub unlabeled: Featurized,
    pub test: Featurized,
    out_domain: Option<LabeledSet>,
    supervised: BTreeMap<(u64, Domain), SupervisedModel>,
    mfcc_finetune_wer: BTreeMap<usize, f64>,
}

fn labeled_set(
    utts: &[Utterance],
    cfg: &ExperimentConfig,
    gen: &GeneratorConfig,
    extra_norm: &[&Featurized],
) -> Result<LabeledSet> {
    let features = featurize(utts, &cfg.frontend)?;
    let normalizer = Normalizer::fit(
        features
            .fbank
            .iter()
            .chain(extra_norm.iter().flat_map(|f| f.fbank.iter())),
    )?;
    let inputs = features.normalized(&normalizer)?;
    let bpe = BpeModel::train(
        features.transcripts.iter().map(String::as_str),
        cfg.bpe.merges,
    )?;
    Ok(LabeledSet {
        features,
        normalizer,
        inputs,
        bpe,
        inventory_hash: PhoneInventory::for_config(gen)?.hash(),
    })
}

impl<'c> Study<'c> {
    /// Renders the in-domain corpus for `seed` and featurizes it.
    pub fn new(cfg: &'c ExperimentConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let s = &cfg.corpus.splits;
        let corpus_seed = named_seed(seed, "corpus");
        let n_lab = s.labeled;
        let n_unl = s.unlabeled;
        let labeled = render_range(&cfg.corpus, corpus_seed, 0..n_lab)?;
        let unlabeled = render_range(&cfg.corpus, corpus_seed, n_lab..n_lab + n_unl)?;
        let skip = n_lab + n_unl + s.finetune;
        let test = render_range(&cfg.corpus, corpus_seed, skip..skip + s.test)?;
        if labeled.is_empty() || unlabeled.is_empty() || test.is_empty() {
            return Err(Error::InsufficientData(
                "a study needs labeled, unlabeled and test utterances".into(),
            ));
        }
        let unlabeled = featurize(&unlabeled, &cfg.frontend)?;
        let labeled = labeled_set(&labeled, cfg, &cfg.corpus, &[&unlabeled])?;
        let test = featurize(&test, &cfg.frontend)?;
        Ok(Self {
            cfg,
            seed,
            labeled,
            unlabeled,
            test,
            out_domain: None,
            supervised: BTreeMap::new(),
            mfcc_finetune_wer: BTreeMap::new(),
        })
    }

    fn out_domain_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            language_seed: self.cfg.ablation.out_domain_language_seed,
            ..self.cfg.corpus.clone()
        }
    }

    /// Labeled data of the out-domain language (same generator settings,
    /// different phone inventory and lexicon).
    pub fn out_domain(&mut self) -> Result<&LabeledSet> {
        if self.out_domain.is_none() {
            let gen = self.out_domain_config();
            let utts = render_range(
                &gen,
                named_seed(self.seed, "out-domain corpus"),
                0..self.cfg.corpus.splits.labeled,
            )?;
            self.out_domain = Some(labeled_set(&utts, self.cfg, &gen, &[])?);
        }
        Ok(self.out_domain.as_ref().expect("just built"))
    }

    fn set(&mut self, domain: Domain) -> Result<&LabeledSet> {
        match domain {
            Domain::InDomain => Ok(&self.labeled),
            Domain::OutDomain => self.out_domain(),
        }
    }

    /// Supervised encoder-decoder trained on the first `fraction` of the
    /// domain's labeled split (cached).
    pub fn supervised(&mut self, fraction: f64, domain: Domain) -> Result<&SupervisedModel> {
        let key = ((fraction * 1e6).round() as u64, domain);
        if !self.supervised.contains_key(&key) {
            let cfg = self.cfg;
            let seed = self.seed;
            let set = self.set(domain)?;
            let n =
                ((set.inputs.len() as f64 * fraction).round() as usize).clamp(1, set.inputs.len());
            let examples = asr_examples(
                &set.features.ids[..n],
                &set.inputs[..n],
                &set.features.transcripts[..n],
                &set.bpe,
            );
            let train = AsrTrainConfig {
                seed: named_seed(seed, &format!("supervised {} {fraction}", domain.label())),
                ..cfg.supervised.clone()
            };
            let out = train_asr(
                &cfg.encoder,
                &cfg.decoder_for(set.bpe.vocab_size()),
                &train,
                &examples,
                AsrInit::Scratch,
                None,
            )?;
            let normalizer = set.normalizer.clone();
            let final_loss = out.losses.last().copied().unwrap_or(f64::NAN);
            self.supervised.insert(
                key,
                SupervisedModel {
                    store: out.store,
                    model: out.model,
                    normalizer,
                    final_loss,
                },
            );
        }
        Ok(&self.supervised[&key])
    }

    /// SEAU units over the unlabeled split.
    pub fn seau_units(
        &mut self,
        fraction: f64,
        domain: Domain,
        clusters: usize,
    ) -> Result<UnitTargets> {
        let layer = self.cfg.unit_layer();
        let kmeans = self
            .cfg
            .quantizer
            .kmeans(clusters, named_seed(self.seed, "kmeans"));
        self.supervised(fraction, domain)?;
        let sup = &self.supervised[&((fraction * 1e6).round() as u64, domain)];
        let inputs = self.unlabeled.normalized(&sup.normalizer)?;
        seau_targets(
            &sup.store,
            &sup.model.encoder,
            layer,
            &inputs,
            &self.unlabeled.unit_alignments(),
            &kmeans,
        )
    }

    pub fn mfcc_units(&self, clusters: usize) -> Result<UnitTargets> {
        let kmeans = self
            .cfg
            .quantizer
            .kmeans(clusters, named_seed(self.seed, "kmeans"));
        mfcc_targets(
            &self.unlabeled.mfcc,
            &self.unlabeled.unit_alignments(),
            &kmeans,
        )
    }

    /// Masked-prediction pre-training on the unlabeled split.
    pub fn pretrain(&self, units: &UnitTargets) -> Result<Checkpoint> {
        let inputs = self.unlabeled.normalized(&self.labeled.normalizer)?;
        let data = pretrain_examples(&self.unlabeled.ids, &inputs, &units.units);
        let cfg = crate::pretrain::PretrainConfig {
            seed: named_seed(self.seed, "pretrain"),
            ..self.cfg.pretrain.clone()
        };
        let out = pretrain_loop(
            &self.cfg.encoder,
            &cfg,
            units.codebook.clusters(),
            &data,
            None,
            None,
        )?;
        Ok(snapshot(
            &out.store,
            serde_json::json!({"kind": "pretrain"}),
        ))
    }

    /// Fine-tunes on the labeled split (from `init`, or from scratch) and
    /// returns the test WER.
    pub fn finetune_wer(&self, init: Option<&Checkpoint>) -> Result<f64> {
        let set = &self.labeled;
        let examples = asr_examples(
            &set.features.ids,
            &set.inputs,
            &set.features.transcripts,
            &set.bpe,
        );
        let train = AsrTrainConfig {
            seed: named_seed(self.seed, "finetune"),
            ..self.cfg.finetune.clone()
        };
        let init = match init {
            Some(c) => AsrInit::Pretrained(c),
            None => AsrInit::Scratch,
        };
        let out = train_asr(
            &self.cfg.encoder,
            &self.cfg.decoder_for(set.bpe.vocab_size()),
            &train,
            &examples,
            init,
            None,
        )?;
        let test_inputs = self.test.normalized(&set.normalizer)?;
        let (_, report) = decode_and_score(
            &out.model,
            &out.store,
            &set.bpe,
            &test_inputs,
            &self.test.transcripts,
            self.cfg.decode.beam,
        )?;
        Ok(report.wer)
    }

    fn mfcc_wer(&mut self, clusters: usize) -> Result<f64> {
        if let Some(&w) = self.mfcc_finetune_wer.get(&clusters) {
            return Ok(w);
        }
        let units = self.mfcc_units(clusters)?;
        let w = self.finetune_wer(Some(&self.pretrain(&units)?))?;
        self.mfcc_finetune_wer.insert(clusters, w);
        Ok(w)
    }

    /// SEAU against MFCC units and against training from scratch, all with
    /// the configured cluster count and equal step budgets.
    pub fn comparison(&mut self) -> Result<ComparisonReport> {
        let clock = Instant::now();
        let c = self.cfg.quantizer.clusters;
        let seau = self.seau_units(1.0, Domain::InDomain, c)?;
        let mfcc = self.mfcc_units(c)?;
        let wer_scratch = self.finetune_wer(None)?;
        let wer_seau = self.finetune_wer(Some(&self.pretrain(&seau)?))?;
        let wer_mfcc = self.mfcc_wer(c)?;
        Ok(ComparisonReport {
            seed: self.seed,
            clusters: c,
            layer: self.cfg.unit_layer(),
            pnmi_seau: seau.quality.pnmi,
            pnmi_mfcc: mfcc.quality.pnmi,
            wer_scratch,
            wer_seau,
            wer_mfcc,
            config_hash: self.cfg.hash(),
            wall_s: clock.elapsed().as_secs_f64(),
        })
    }

    /// WER of the MFCC-unit baseline at `clusters` (cached).
    pub fn mfcc_baseline_wer(&mut self, clusters: usize) -> Result<f64> {
        self.mfcc_wer(clusters)
    }

    fn try_cell(&mut self, cell: &Cell, with_wer: bool, report: &mut CellReport) -> Result<()> {
        let units = self.seau_units(cell.fraction, cell.domain, cell.clusters)?;
        report.pnmi = Some(units.quality.pnmi);
        report.cluster_purity = Some(units.quality.cluster_purity);
        report.phone_purity = Some(units.quality.phone_purity);
        if with_wer {
            report.wer = Some(self.finetune_wer(Some(&self.pretrain(&units)?))?);
        }
        Ok(())
    }

    /// One ablation cell; failures are recorded in the report.
    pub fn cell(&mut self, cell: &Cell, with_wer: bool) -> CellReport {
        let mut report = CellReport {
            fraction: cell.fraction,
            domain: cell.domain,
            clusters: cell.clusters,
            seed: self.seed,
            pnmi: None,
            cluster_purity: None,
            phone_purity: None,
            wer: None,
            config_hash: self.cfg.hash(),
            error: None,
        };
        if let Err(e) = self.try_cell(cell, with_wer, &mut report) {
            report.error = Some(e.to_string());
        }
        report
    }
}

/// The cross product {fraction} x {in, out domain} x {clusters}.
pub fn ablation_cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut cells = Vec::new();
    for &fraction in &cfg.ablation.fractions {
        for domain in [Domain::InDomain, Domain::OutDomain] {
            for &clusters in &cfg.ablation.clusters {
                cells.push(Cell {
                    fraction,
                    domain,
                    clusters,
                });
            }
        }
    }
    cells
}

/// Runs every cell for every seed, continuing past failed cells.
pub fn run_ablation(
    cfg: &ExperimentConfig,
    seeds: &[u64],
    cells: &[Cell],
) -> Result<Vec<CellReport>> {
    let mut out = Vec::new();
    for &seed in seeds {
        let mut study = Study::new(cfg, seed)?;
        for cell in cells {
            out.push(study.cell(cell, cfg.ablation.wer));
        }
    }
    Ok(out)
}

const CSV_HEADER: &str =
    "fraction,domain,clusters,seed,pnmi,cluster_purity,phone_purity,wer,config_hash,error";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Writes `<stem>.csv` and `<stem>.json`.
pub fn write_ablation_report(dir: &Path, stem: &str, rows: &[CellReport]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut csv = Vec::new();
    writeln!(csv, "{CSV_HEADER}")?;
    for r in rows {
        let err = r.error.as_deref().unwrap_or("").replace(['"', ','], ";");
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{}",
            r.fraction,
            r.domain.label(),
            r.clusters,
            r.seed,
            opt(r.pnmi),
            opt(r.cluster_purity),
            opt(r.phone_purity),
            opt(r.wer),
            r.config_hash,
            err
        )?;
    }
    write_atomic(&dir.join(format!("{stem}.csv")), &csv)?;
    write_atomic(
        &dir.join(format!("{stem}.json")),
        serde_json::to_string_pretty(rows)?.as_bytes(),
    )
}
