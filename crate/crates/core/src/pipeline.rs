//! On-disk stage pipeline under `<output_dir>/<name>/<stage>/`.
//!
//! Every stage records its input hash, output hash and wall time in
//! `ledger.json`; a stage whose inputs are unchanged and whose outputs are
//! intact is skipped. Inputs hash the stage's own settings together with the
//! output hashes of the stages it reads, so a change propagates downstream.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use seau_autodiff::{Checkpoint, Tensor};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::asr::{load_asr, train_asr, AsrInit, AsrTrainConfig, BpeModel};
use crate::config::{content_hash, named_seed, ExperimentConfig};
use crate::corpus::{generate_corpus, load_split, CorpusManifest, MANIFEST_FILE};
use crate::error::{config_err, Error, Result};
use crate::experiment::{
    asr_examples, cluster_frames, decode_and_score, layer_features, pretrain_examples,
};
use crate::format::write_atomic;
use crate::frontend::{fbank, mfcc, read_features, write_features, FeatureKind, Normalizer};
use crate::pretrain::{pretrain_loop, PretrainConfig};
use crate::quantizer::{
    downsample_alignment, pool_to_unit_rate, read_unit_file, write_unit_file, UnitSequence,
};

pub const LEDGER_FILE: &str = "ledger.json";

/// Files that vary between identical runs (timings) and stay out of output hashes.
const UNHASHED: &[&str] = &["metrics.jsonl"];

pub fn version_string() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnitSource {
    Mfcc,
    Seau,
}

impl fmt::Display for UnitSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UnitSource::Mfcc => "mfcc",
            UnitSource::Seau => "seau",
        })
    }
}

impl FromStr for UnitSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mfcc" => Ok(UnitSource::Mfcc),
            "seau" => Ok(UnitSource::Seau),
            _ => Err(config_err(format!(
                "unknown unit source `{s}` (expected mfcc or seau)"
            ))),
        }
    }
}

/// Initialization of a fine-tuning run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FinetuneInit {
    None,
    /// The pre-training checkpoint built on these units.
    Pretrained(UnitSource),
}

impl FinetuneInit {
    /// Name of the run directory, shared by `decode` and `score`.
    pub fn tag(&self) -> String {
        match self {
            FinetuneInit::None => "scratch".into(),
            FinetuneInit::Pretrained(s) => format!("from-{s}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub status: StageStatus,
    pub input_hash: String,
    pub output_hash: String,
    pub wall_ms: u64,
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Per-stage records, keyed by stage name (`extract-units/seau`, ...).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLedger {
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunLedger {
    pub fn load(path: &Path) -> Result<Self> {
        match std::fs::read_to_string(path) {
            Ok(text) => Ok(serde_json::from_str(&text)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }
}

/// Whether a stage ran or was skipped on a hash match.
#[derive(Clone, Debug, PartialEq)]
pub struct StageOutcome {
    pub stage: String,
    pub skipped: bool,
    pub record: StageRecord,
}

/// SHA-256 over every file under `dir` (relative path and contents, sorted).
pub fn hash_dir(dir: &Path) -> Result<String> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for rel in files {
        let name = rel.to_string_lossy().replace('\\', "/");
        if UNHASHED.iter().any(|u| name.ends_with(u)) || name.ends_with(".tmp") {
            continue;
        }
        h.update(name.as_bytes());
        h.update([0]);
        h.update(content_hash(&std::fs::read(dir.join(&rel))?).as_bytes());
    }
    Ok(hex::encode(h.finalize()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            out.push(path.strip_prefix(root).expect("under root").to_path_buf());
        }
    }
    Ok(())
}

/// An experiment directory and its configuration.
pub struct Pipeline {
    pub cfg: ExperimentConfig,
    pub dir: PathBuf,
    /// Rerun stages even when their hashes match.
    pub force: bool,
}

impl Pipeline {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let dir = cfg.experiment_dir();
        Ok(Self {
            cfg,
            dir,
            force: false,
        })
    }

    pub fn ledger_path(&self) -> PathBuf {
        self.dir.join(LEDGER_FILE)
    }

    pub fn ledger(&self) -> Result<RunLedger> {
        RunLedger::load(&self.ledger_path())
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.dir.join(stage)
    }

    /// Output hash of a finished upstream stage, or a prerequisite error
    /// naming `artifact` and the stage that produces it.
    fn require(
        &self,
        ledger: &RunLedger,
        stage: &str,
        artifact: &Path,
        producer: &str,
    ) -> Result<String> {
        let missing = || Error::Prerequisite {
            artifact: artifact.display().to_string(),
            stage: producer.to_string(),
        };
        let rec = ledger.stages.get(stage).ok_or_else(missing)?;
        if rec.status != StageStatus::Ok || !artifact.exists() {
            return Err(missing());
        }
        Ok(rec.output_hash.clone())
    }

    fn run_stage(
        &self,
        stage: &str,
        inputs: serde_json::Value,
        body: impl FnOnce(&Path) -> Result<()>,
    ) -> Result<StageOutcome> {
        let input_hash = content_hash(&serde_json::to_vec(
            &json!({"stage": stage, "inputs": inputs}),
        )?);
        let out_dir = self.stage_dir(stage);
        let ledger = self.ledger()?;
        if let Some(rec) = ledger.stages.get(stage) {
            if !self.force
                && rec.status == StageStatus::Ok
                && rec.input_hash == input_hash
                && out_dir.is_dir()
                && hash_dir(&out_dir)? == rec.output_hash
            {
                return Ok(StageOutcome {
                    stage: stage.into(),
                    skipped: true,
                    record: rec.clone(),
                });
            }
        }
        if out_dir.exists() {
            std::fs::remove_dir_all(&out_dir)?;
        }
        std::fs::create_dir_all(&out_dir)?;
        let clock = Instant::now();
        let result = body(&out_dir);
        let wall_ms = clock.elapsed().as_millis() as u64;
        let record = StageRecord {
            status: if result.is_ok() {
                StageStatus::Ok
            } else {
                StageStatus::Failed
            },
            input_hash,
            output_hash: if result.is_ok() {
                hash_dir(&out_dir)?
            } else {
                String::new()
            },
            wall_ms,
            version: version_string(),
            error: result.as_ref().err().map(|e| e.to_string()),
        };
        // Re-read so records written by concurrent stages survive.
        let mut ledger = self.ledger()?;
        ledger.stages.insert(stage.into(), record.clone());
        ledger.save(&self.ledger_path())?;
        result?;
        Ok(StageOutcome {
            stage: stage.into(),
            skipped: false,
            record,
        })
    }

    fn corpus_dir(&self) -> PathBuf {
        self.stage_dir("corpus")
    }

    fn corpus(&self, ledger: &RunLedger) -> Result<(String, CorpusManifest)> {
        let dir = self.corpus_dir();
        let h = self.require(ledger, "corpus", &dir.join(MANIFEST_FILE), "corpus-gen")?;
        Ok((h, CorpusManifest::load(&dir)?))
    }

    pub fn corpus_gen(&self) -> Result<StageOutcome> {
        let seed = named_seed(self.cfg.seed, "corpus");
        self.run_stage(
            "corpus",
            json!({"corpus": self.cfg.corpus, "seed": seed}),
            |dir| generate_corpus(dir, seed, &self.cfg.corpus).map(|_| ()),
        )
    }

    /// Log-mel and MFCC archives for every split, and the input normalizer
    /// fitted on the labeled and unlabeled log-mel frames.
    pub fn featurize(&self) -> Result<StageOutcome> {
        let ledger = self.ledger()?;
        let (corpus_hash, manifest) = self.corpus(&ledger)?;
        let fe = self.cfg.frontend;
        self.run_stage(
            "features",
            json!({"corpus": corpus_hash, "frontend": fe}),
            |dir| {
                let mut norm = crate::frontend::NormalizerBuilder::default();
                for (split, ids) in &manifest.splits {
                    for (id, utt) in ids.iter().zip(load_split(&manifest, split)?) {
                        let utt = utt?;
                        let fb = fbank(&utt.signal_frames, fe.n_mels)?;
                        let mf = mfcc(&fb, fe.n_ceps, fe.deltas)?;
                        if split == "labeled" || split == "unlabeled" {
                            norm.push(&fb.frames)?;
                        }
                        write_features(
                            &dir.join("fbank").join(format!("{id}.seau")),
                            &fb,
                            &utt.phone_alignment,
                            &utt.transcript,
                        )?;
                        write_features(
                            &dir.join("mfcc").join(format!("{id}.seau")),
                            &mf,
                            &utt.phone_alignment,
                            &utt.transcript,
                        )?;
                    }
                }
                write_atomic(
                    &dir.join("normalizer.json"),
                    serde_json::to_string_pretty(&norm.finish()?)?.as_bytes(),
                )
            },
        )
    }

    fn features(&self, ledger: &RunLedger) -> Result<(String, Features)> {
        let dir = self.stage_dir("features");
        let h = self.require(
            ledger,
            "features",
            &dir.join("normalizer.json"),
            "featurize",
        )?;
        let normalizer: Normalizer =
            serde_json::from_str(&std::fs::read_to_string(dir.join("normalizer.json"))?)?;
        Ok((h, Features { dir, normalizer }))
    }

    fn split_ids(&self, ledger: &RunLedger, split: &str) -> Result<Vec<String>> {
        Ok(self.corpus(ledger)?.1.split(split)?.to_vec())
    }

    /// Labeled utterances used for supervised training and fine-tuning: the
    /// fine-tune split when the corpus has one, else the labeled split.
    fn finetune_ids(&self, ledger: &RunLedger) -> Result<Vec<String>> {
        let ft = self.split_ids(ledger, "finetune")?;
        if ft.is_empty() {
            self.split_ids(ledger, "labeled")
        } else {
            Ok(ft)
        }
    }

    fn train_from(
        &self,
        feats: &Features,
        ids: &[String],
        bpe: &BpeModel,
        train: &AsrTrainConfig,
        init: AsrInit<'_>,
        dir: &Path,
    ) -> Result<()> {
        let loaded = feats.load(ids, "fbank")?;
        let inputs: Vec<Tensor<f32>> = loaded
            .iter()
            .map(|l| feats.normalizer.apply_frames(&l.0))
            .collect::<Result<_>>()?;
        let transcripts: Vec<String> = loaded.into_iter().map(|l| l.2).collect();
        let examples = asr_examples(ids, &inputs, &transcripts, bpe);
        train_asr(
            &self.cfg.encoder,
            &self.cfg.decoder_for(bpe.vocab_size()),
            train,
            &examples,
            init,
            Some(dir),
        )?;
        write_atomic(
            &dir.join("bpe.json"),
            serde_json::to_string_pretty(bpe)?.as_bytes(),
        )
    }

    /// BPE model and supervised encoder-decoder on the labeled split.
    pub fn train_supervised(&self) -> Result<StageOutcome> {
        let ledger = self.ledger()?;
        let (feat_hash, feats) = self.features(&ledger)?;
        let ids = self.split_ids(&ledger, "labeled")?;
        let train = AsrTrainConfig {
            seed: named_seed(self.cfg.seed, "supervised"),
            ..self.cfg.supervised.clone()
        };
        let inputs = json!({
            "features": feat_hash, "bpe": self.cfg.bpe, "encoder": self.cfg.encoder,
            "decoder": self.cfg.decoder, "train": train,
        });
        self.run_stage("supervised", inputs, |dir| {
            let transcripts: Vec<String> = feats
                .load(&ids, "fbank")?
                .into_iter()
                .map(|l| l.2)
                .collect();
            let bpe = BpeModel::train(transcripts.iter().map(String::as_str), self.cfg.bpe.merges)?;
            self.train_from(&feats, &ids, &bpe, &train, AsrInit::Scratch, dir)
        })
    }

    fn units_stage(source: UnitSource) -> String {
        format!("units/{source}")
    }

    /// Clusters the unlabeled split into units. `layer` and `clusters`
    /// default to the quantizer settings.
    pub fn extract_units(
        &self,
        source: UnitSource,
        layer: Option<usize>,
        clusters: Option<usize>,
    ) -> Result<StageOutcome> {
        let ledger = self.ledger()?;
        let (feat_hash, feats) = self.features(&ledger)?;
        let ids = self.split_ids(&ledger, "unlabeled")?;
        let clusters = clusters.unwrap_or(self.cfg.quantizer.clusters);
        let kmeans = self
            .cfg
            .quantizer
            .kmeans(clusters, named_seed(self.cfg.seed, "kmeans"));
        let mut inputs = json!({"features": feat_hash, "kmeans": kmeans, "source": source});
        let model = match source {
            UnitSource::Mfcc => None,
            UnitSource::Seau => {
                let ckpt_path = self.stage_dir("supervised").join("final.ckpt");
                let h = self.require(&ledger, "supervised", &ckpt_path, "train-supervised")?;
                let layer = layer.unwrap_or_else(|| self.cfg.unit_layer());
                inputs["supervised"] = json!(h);
                inputs["layer"] = json!(layer);
                Some((Checkpoint::load(&ckpt_path)?, layer))
            }
        };
        if model.is_none() && layer.is_some() {
            return Err(config_err("--layer applies to seau units only"));
        }
        self.run_stage(&Self::units_stage(source), inputs, |dir| {
            let loaded = feats.load(&ids, "fbank")?;
            let alignments: Vec<Vec<u16>> =
                loaded.iter().map(|l| downsample_alignment(&l.1)).collect();
            let targets = match &model {
                None => {
                    let pooled: Vec<Tensor<f32>> = feats
                        .load(&ids, "mfcc")?
                        .iter()
                        .map(|l| pool_to_unit_rate(&l.0))
                        .collect::<Result<_>>()?;
                    cluster_frames(&pooled, &alignments, &kmeans, FeatureKind::Mfcc, None)?
                }
                Some((ckpt, layer)) => {
                    let (store, asr) = load_asr(ckpt)?;
                    let layers: Vec<Tensor<f32>> = loaded
                        .iter()
                        .map(|l| {
                            layer_features(
                                &store,
                                &asr.encoder,
                                &feats.normalizer.apply_frames(&l.0)?,
                                *layer,
                            )
                        })
                        .collect::<Result<_>>()?;
                    cluster_frames(
                        &layers,
                        &alignments,
                        &kmeans,
                        FeatureKind::EncoderLayer,
                        Some(*layer),
                    )?
                }
            };
            targets.codebook.save(&dir.join("codebook.bin"))?;
            for (id, units) in ids.iter().zip(&targets.units) {
                let seq = UnitSequence {
                    utterance: id.clone(),
                    units: units.clone(),
                    clusters,
                };
                write_unit_file(&dir.join("units").join(format!("{id}.unit")), &seq)?;
            }
            write_atomic(
                &dir.join("quality.json"),
                serde_json::to_string_pretty(&targets.quality)?.as_bytes(),
            )
        })
    }

    fn pretrain_stage(source: UnitSource) -> String {
        format!("pretrain/{source}")
    }

    /// Masked prediction of `source` units on the unlabeled split.
    pub fn pretrain(&self, source: UnitSource) -> Result<StageOutcome> {
        let ledger = self.ledger()?;
        let (feat_hash, feats) = self.features(&ledger)?;
        let units_dir = self.stage_dir(&Self::units_stage(source));
        let units_hash = self.require(
            &ledger,
            &Self::units_stage(source),
            &units_dir.join("codebook.bin"),
            &format!("extract-units --source {source}"),
        )?;
        let ids = self.split_ids(&ledger, "unlabeled")?;
        let cfg = PretrainConfig {
            seed: named_seed(self.cfg.seed, "pretrain"),
            ..self.cfg.pretrain.clone()
        };
        let inputs = json!({"features": feat_hash, "units": units_hash, "encoder": self.cfg.encoder, "pretrain": cfg});
        self.run_stage(&Self::pretrain_stage(source), inputs, |dir| {
            let mut clusters = 0;
            let mut data = Vec::with_capacity(ids.len());
            for (id, l) in ids.iter().zip(feats.load(&ids, "fbank")?) {
                let seq = read_unit_file(&units_dir.join("units").join(format!("{id}.unit")), id)?;
                clusters = seq.clusters;
                data.extend(pretrain_examples(
                    std::slice::from_ref(id),
                    &[feats.normalizer.apply_frames(&l.0)?],
                    &[seq.units],
                ));
            }
            pretrain_loop(&self.cfg.encoder, &cfg, clusters, &data, Some(dir), None).map(|_| ())
        })
    }

    /// Fine-tunes an encoder-decoder from scratch or from a pre-trained
    /// encoder, with the same step budget either way.
    pub fn finetune(&self, init: &FinetuneInit) -> Result<StageOutcome> {
        let ledger = self.ledger()?;
        let (feat_hash, feats) = self.features(&ledger)?;
        let sup_dir = self.stage_dir("supervised");
        let sup_hash = self.require(
            &ledger,
            "supervised",
            &sup_dir.join("bpe.json"),
            "train-supervised",
        )?;
        let ids = self.finetune_ids(&ledger)?;
        let train = AsrTrainConfig {
            seed: named_seed(self.cfg.seed, "finetune"),
            ..self.cfg.finetune.clone()
        };
        let mut inputs = json!({"features": feat_hash, "bpe": sup_hash, "encoder": self.cfg.encoder, "decoder": self.cfg.decoder, "train": train});
        let ckpt = match init {
            FinetuneInit::None => None,
            FinetuneInit::Pretrained(source) => {
                let stage = Self::pretrain_stage(*source);
                let path = self.stage_dir(&stage).join("final.ckpt");
                inputs["init"] = json!(self.require(
                    &ledger,
                    &stage,
                    &path,
                    &format!("pretrain --units {source}")
                )?);
                Some(Checkpoint::load(&path)?)
            }
        };
        self.run_stage(&format!("finetune/{}", init.tag()), inputs, |dir| {
            let bpe: BpeModel =
                serde_json::from_str(&std::fs::read_to_string(sup_dir.join("bpe.json"))?)?;
            let init = match &ckpt {
                Some(c) => AsrInit::Pretrained(c),
                None => AsrInit::Scratch,
            };
            self.train_from(&feats, &ids, &bpe, &train, init, dir)
        })
    }

    /// Decodes the test split with a fine-tuned model into `hyp.txt`
    /// (`id<TAB>hypothesis` per line).
    pub fn decode(&self, init: &FinetuneInit) -> Result<StageOutcome> {
        let ledger = self.ledger()?;
        let (feat_hash, feats) = self.features(&ledger)?;
        let stage = format!("finetune/{}", init.tag());
        let run = self.stage_dir(&stage);
        let flag = match init {
            FinetuneInit::None => "finetune --init none".to_string(),
            FinetuneInit::Pretrained(s) => format!("finetune --init checkpoint --units {s}"),
        };
        let model_hash = self.require(&ledger, &stage, &run.join("final.ckpt"), &flag)?;
        let ids = self.split_ids(&ledger, "test")?;
        let beam = self.cfg.decode.beam;
        let inputs = json!({"features": feat_hash, "model": model_hash, "beam": beam});
        self.run_stage(&format!("decode/{}", init.tag()), inputs, |dir| {
            let bpe: BpeModel =
                serde_json::from_str(&std::fs::read_to_string(run.join("bpe.json"))?)?;
            let (store, model) = load_asr(&Checkpoint::load(run.join("final.ckpt"))?)?;
            let loaded = feats.load(&ids, "fbank")?;
            let inputs: Vec<Tensor<f32>> = loaded
                .iter()
                .map(|l| feats.normalizer.apply_frames(&l.0))
                .collect::<Result<_>>()?;
            let refs: Vec<String> = loaded.into_iter().map(|l| l.2).collect();
            let (hyps, _) = decode_and_score(&model, &store, &bpe, &inputs, &refs, beam)?;
            let mut text = String::new();
            for (id, h) in ids.iter().zip(&hyps) {
                text.push_str(&format!("{id}\t{h}\n"));
            }
            write_atomic(&dir.join("hyp.txt"), text.as_bytes())
        })
    }

    /// WER of a decode run against the test transcripts, into `score.json`.
    pub fn score(&self, init: &FinetuneInit) -> Result<StageOutcome> {
        let ledger = self.ledger()?;
        let (feat_hash, feats) = self.features(&ledger)?;
        let stage = format!("decode/{}", init.tag());
        let hyp_path = self.stage_dir(&stage).join("hyp.txt");
        let hyp_hash = self.require(
            &ledger,
            &stage,
            &hyp_path,
            &format!("decode --run {}", init.tag()),
        )?;
        let ids = self.split_ids(&ledger, "test")?;
        self.run_stage(
            &format!("score/{}", init.tag()),
            json!({"features": feat_hash, "hyp": hyp_hash}),
            |dir| {
                let hyps = read_hypotheses(&hyp_path)?;
                let refs: Vec<String> = feats
                    .load(&ids, "fbank")?
                    .into_iter()
                    .map(|l| l.2)
                    .collect();
                let mut pairs = Vec::with_capacity(ids.len());
                for (id, r) in ids.iter().zip(&refs) {
                    let h = hyps.get(id).ok_or_else(|| {
                        Error::Data(format!(
                            "no hypothesis for `{id}` in {}",
                            hyp_path.display()
                        ))
                    })?;
                    pairs.push((h.as_str(), r.as_str()));
                }
                let report = crate::asr::score(pairs)?;
                write_atomic(
                    &dir.join("score.json"),
                    serde_json::to_string_pretty(&report)?.as_bytes(),
                )
            },
        )
    }

    /// Every stage in order: both unit sources, both pre-trainings, and the
    /// three fine-tuning runs.
    pub fn run_all(&self) -> Result<Vec<StageOutcome>> {
        let mut out = vec![
            self.corpus_gen()?,
            self.featurize()?,
            self.train_supervised()?,
        ];
        for source in [UnitSource::Mfcc, UnitSource::Seau] {
            out.push(self.extract_units(source, None, None)?);
            out.push(self.pretrain(source)?);
        }
        for init in [
            FinetuneInit::None,
            FinetuneInit::Pretrained(UnitSource::Mfcc),
            FinetuneInit::Pretrained(UnitSource::Seau),
        ] {
            out.push(self.finetune(&init)?);
            out.push(self.decode(&init)?);
            out.push(self.score(&init)?);
        }
        Ok(out)
    }
}

/// Reads `id<TAB>hypothesis` lines.
pub fn read_hypotheses(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|l| {
            let (id, h) = l
                .split_once('\t')
                .ok_or_else(|| Error::Data(format!("hypothesis line without a tab: {l}")))?;
            Ok((id.to_string(), h.to_string()))
        })
        .collect()
}

struct Features {
    dir: PathBuf,
    normalizer: Normalizer,
}

impl Features {
    /// `(frames, alignment, transcript)` of each utterance.
    fn load(&self, ids: &[String], kind: &str) -> Result<Vec<(Tensor<f32>, Vec<u16>, String)>> {
        ids.iter()
            .map(|id| {
                let (seq, a, t) =
                    read_features(&self.dir.join(kind).join(format!("{id}.seau")), id)?;
                Ok((seq.frames, a, t))
            })
            .collect()
    }
}
