//! Synthetic phone-based corpus with exact frame alignments.
//!
//! A *language* is a phone inventory (one spectral template per phone) plus a
//! lexicon of words spelled as phone sequences; both are derived from
//! `language_seed`. Utterances are random word sequences rendered frame by
//! frame from the templates, with per-utterance speaker variation (frequency
//! warp, spectral tilt, gain), boundary coarticulation and additive noise.
//! Phone 0 is silence and separates words, so the transcript can always be
//! read back from the alignment.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use seau_autodiff::{mix_seed, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{config_err, Error, Result};
use crate::format::{encode_frame_file, read_frame_file, write_atomic};

pub const SILENCE: u16 = 0;
pub const SPLIT_NAMES: [&str; 4] = ["labeled", "unlabeled", "finetune", "test"];
const MAX_TEMPLATE_COSINE: f64 = 0.95;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SpeakerVariation {
    /// Maximum frequency shift of the templates, in bins.
    pub warp_bins: f64,
    /// Maximum log-gain difference between the top and bottom bin.
    pub tilt: f64,
    /// Maximum broadband gain change in dB.
    pub gain_db: f64,
    /// Maximum height in dB of each of three smooth bumps in a random
    /// channel response.
    #[serde(default)]
    pub channel_db: f64,
}

impl SpeakerVariation {
    pub fn none() -> Self {
        Self {
            warp_bins: 0.0,
            tilt: 0.0,
            gain_db: 0.0,
            channel_db: 0.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SplitSizes {
    pub labeled: usize,
    pub unlabeled: usize,
    pub finetune: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.labeled + self.unlabeled + self.finetune + self.test
    }

    fn counts(&self) -> [usize; 4] {
        [self.labeled, self.unlabeled, self.finetune, self.test]
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct GeneratorConfig {
    /// Seeds the phone inventory and lexicon; two corpora with different
    /// language seeds are different languages.
    pub language_seed: u64,
    /// Phone count including silence.
    pub n_phones: usize,
    pub signal_dim: usize,
    pub lexicon_size: usize,
    pub word_phones: [usize; 2],
    pub words_per_utterance: [usize; 2],
    pub phone_duration: [usize; 2],
    /// `None` renders without noise.
    pub snr_db: Option<f64>,
    pub speaker: SpeakerVariation,
    /// Same perturbations drawn independently for every frame.
    pub frame_jitter: SpeakerVariation,
    /// Weight of the neighbouring phone on the first/last frame of a run.
    pub coarticulation: f64,
    /// Spectrally distinct realizations per non-silence phone, one drawn
    /// for each phone occurrence.
    pub allophones: usize,
    /// Separate words with silence. Without gaps utterances hold one word.
    pub word_gaps: bool,
    pub splits: SplitSizes,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            language_seed: 1,
            n_phones: 16,
            signal_dim: 64,
            lexicon_size: 24,
            word_phones: [2, 4],
            words_per_utterance: [8, 14],
            phone_duration: [3, 10],
            snr_db: Some(10.0),
            speaker: SpeakerVariation {
                warp_bins: 3.0,
                tilt: 1.0,
                gain_db: 6.0,
                channel_db: 0.0,
            },
            frame_jitter: SpeakerVariation::none(),
            coarticulation: 0.3,
            allophones: 1,
            word_gaps: true,
            splits: SplitSizes {
                labeled: 400,
                unlabeled: 2000,
                finetune: 0,
                test: 200,
            },
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let range_ok = |r: [usize; 2]| r[0] >= 1 && r[0] <= r[1];
        if self.n_phones < 2 {
            return Err(config_err(format!(
                "need at least 2 phones, got {}",
                self.n_phones
            )));
        }
        if self.n_phones > u16::MAX as usize {
            return Err(config_err("too many phones"));
        }
        if self.lexicon_size == 0 {
            return Err(config_err("empty lexicon"));
        }
        if self.signal_dim < 2 {
            return Err(config_err("signal_dim must be at least 2"));
        }
        for (name, r) in [
            ("word_phones", self.word_phones),
            ("words_per_utterance", self.words_per_utterance),
            ("phone_duration", self.phone_duration),
        ] {
            if !range_ok(r) {
                return Err(config_err(format!("{name} range {r:?} is invalid")));
            }
        }
        if self.splits.total() == 0 {
            return Err(config_err("corpus needs at least one utterance"));
        }
        if !self.word_gaps && self.words_per_utterance[1] > 1 {
            return Err(config_err(
                "without word gaps each utterance must hold exactly one word",
            ));
        }
        let spoken = if self.word_gaps {
            self.n_phones - 1
        } else {
            self.n_phones
        };
        if spoken == 0 {
            return Err(config_err("no non-silence phones"));
        }
        if self.allophones == 0 {
            return Err(config_err("allophones must be at least 1"));
        }
        if !(0.0..0.5).contains(&self.coarticulation) {
            return Err(config_err("coarticulation must lie in [0, 0.5)"));
        }
        Ok(())
    }
}

/// Spectral templates of unit L2 norm: one canonical template per phone,
/// plus alternative realizations (allophones) for the non-silence phones.
#[derive(Clone, Debug, PartialEq)]
pub struct PhoneInventory {
    pub templates: Vec<Vec<f32>>,
    /// `variants[p][0] == templates[p]`; silence has a single variant.
    pub variants: Vec<Vec<Vec<f32>>>,
}

impl PhoneInventory {
    pub fn generate(language_seed: u64, n_phones: usize, dim: usize) -> Result<Self> {
        Self::with_allophones(language_seed, n_phones, dim, 1)
    }

    pub fn with_allophones(
        language_seed: u64,
        n_phones: usize,
        dim: usize,
        allophones: usize,
    ) -> Result<Self> {
        if allophones == 0 {
            return Err(config_err("each phone needs at least one realization"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(language_seed, 0x1f));
        let n_templates = 1 + (n_phones - 1) * allophones;
        let mut templates: Vec<Vec<f32>> = Vec::with_capacity(n_templates);
        // silence: smooth, low-tilt floor
        templates.push(normalized(
            (0..dim)
                .map(|k| 1.0 + 0.3 * (k as f64 / dim as f64))
                .collect(),
        ));
        let mut attempts = 0;
        while templates.len() < n_templates {
            attempts += 1;
            if attempts > 100_000 {
                return Err(config_err(format!(
                    "cannot draw {n_phones} distinct templates in {dim} bins"
                )));
            }
            let n_formants = rng.random_range(2..=3);
            let mut spec = vec![0.05f64; dim];
            for _ in 0..n_formants {
                let centre = rng.random_range(0.0..dim as f64);
                let width = rng.random_range(1.0..3.5) * dim as f64 / 64.0;
                let amp = rng.random_range(0.4..1.0);
                for (k, s) in spec.iter_mut().enumerate() {
                    *s += amp * (-(k as f64 - centre).powi(2) / (2.0 * width * width)).exp();
                }
            }
            let cand = normalized(spec);
            if templates
                .iter()
                .all(|t| cosine(t, &cand) < MAX_TEMPLATE_COSINE)
            {
                templates.push(cand);
            }
        }
        // canonical templates first so a single-realization inventory is a
        // prefix of the multi-realization one
        let mut variants = vec![vec![templates[0].clone()]];
        for p in 1..n_phones {
            variants.push(
                (0..allophones)
                    .map(|v| {
                        templates[if v == 0 {
                            p
                        } else {
                            n_phones + (p - 1) * (allophones - 1) + v - 1
                        }]
                        .clone()
                    })
                    .collect(),
            );
        }
        templates.truncate(n_phones);
        Ok(Self {
            templates,
            variants,
        })
    }

    pub fn for_config(config: &GeneratorConfig) -> Result<Self> {
        Self::with_allophones(
            config.language_seed,
            config.n_phones,
            config.signal_dim,
            config.allophones,
        )
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in self.variants.iter().flatten() {
            for v in t {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

fn normalized(v: Vec<f64>) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| (x / n) as f32).collect()
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Words spelled as phone sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct Lexicon {
    pub words: Vec<(String, Vec<u16>)>,
}

impl Lexicon {
    pub fn generate(config: &GeneratorConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.language_seed, 0x2f));
        let first = if config.word_gaps { 1 } else { 0 };
        let spoken = config.n_phones - first;
        let [lo, hi] = config.word_phones;
        let capacity: f64 = (lo..=hi)
            .map(|l| spoken as f64 * (spoken.max(2) as f64 - 1.0).powi(l as i32 - 1))
            .sum();
        if capacity < config.lexicon_size as f64 {
            return Err(config_err(format!(
                "only {capacity} distinct words possible, lexicon needs {}",
                config.lexicon_size
            )));
        }
        let mut words: Vec<(String, Vec<u16>)> = Vec::with_capacity(config.lexicon_size);
        while words.len() < config.lexicon_size {
            let len = rng.random_range(lo..=hi);
            let mut phones: Vec<u16> = Vec::with_capacity(len);
            while phones.len() < len {
                let p = (first + rng.random_range(0..spoken)) as u16;
                if phones.last() != Some(&p) || spoken == 1 {
                    phones.push(p);
                }
            }
            if spoken == 1 && len > 1 {
                continue;
            }
            if words.iter().all(|(_, w)| *w != phones) {
                words.push((spell(&phones), phones));
            }
        }
        Ok(Self { words })
    }

    fn lookup(&self, phones: &[u16]) -> Option<&str> {
        self.words
            .iter()
            .find(|(_, p)| p == phones)
            .map(|(w, _)| w.as_str())
    }

    fn to_manifest(&self) -> String {
        self.words
            .iter()
            .map(|(w, p)| {
                let ps: Vec<String> = p.iter().map(u16::to_string).collect();
                format!("{w}:{}", ps.join("-"))
            })
            .collect::<Vec<_>>()
            .join(",")
    }

    fn from_manifest(s: &str) -> Result<Self> {
        let mut words = Vec::new();
        for item in s.split(',').filter(|i| !i.is_empty()) {
            let (w, p) = item
                .split_once(':')
                .ok_or_else(|| Error::Data(format!("bad lexicon entry `{item}`")))?;
            let phones = p
                .split('-')
                .map(|x| {
                    x.parse::<u16>()
                        .map_err(|_| Error::Data(format!("bad phone id in `{item}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            words.push((w.to_string(), phones));
        }
        Ok(Self { words })
    }

    /// Reads the transcript back from a frame-level alignment.
    pub fn transcript_from_alignment(&self, alignment: &[u16], word_gaps: bool) -> Result<String> {
        let mut runs: Vec<u16> = Vec::new();
        for &p in alignment {
            if runs.last() != Some(&p) {
                runs.push(p);
            }
        }
        let segments: Vec<Vec<u16>> = if word_gaps {
            runs.split(|&p| p == SILENCE)
                .filter(|s| !s.is_empty())
                .map(<[u16]>::to_vec)
                .collect()
        } else {
            vec![runs]
        };
        let mut words = Vec::with_capacity(segments.len());
        for seg in &segments {
            let w = self
                .lookup(seg)
                .ok_or_else(|| Error::Alignment(format!("phone sequence {seg:?} is not a word")))?;
            words.push(w);
        }
        Ok(words.join(" "))
    }
}

/// Spelling: one letter per phone id (a = 1, b = 2, ...).
fn spell(phones: &[u16]) -> String {
    phones
        .iter()
        .map(|&p| {
            let i = p as u32;
            if i < 26 {
                char::from_u32('a' as u32 + i).unwrap_or('?')
            } else {
                char::from_u32(0x3b1 + (i - 26) % 24).unwrap_or('?')
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    /// `T x D` nonnegative spectral frames.
    pub signal_frames: Tensor<f32>,
    pub transcript: String,
    pub phone_alignment: Vec<u16>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusManifest {
    pub dir: PathBuf,
    pub seed: u64,
    pub config: GeneratorConfig,
    pub inventory_hash: String,
    pub lexicon: Lexicon,
    pub splits: BTreeMap<String, Vec<String>>,
}

pub const MANIFEST_FILE: &str = "manifest";

impl CorpusManifest {
    pub fn utterance_count(&self) -> usize {
        self.splits.values().map(Vec::len).sum()
    }

    pub fn split(&self, name: &str) -> Result<&[String]> {
        self.splits
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::NotFound(format!("split `{name}` not in manifest")))
    }

    pub fn utterance_path(&self, id: &str) -> PathBuf {
        self.dir.join("utts").join(format!("{id}.seau"))
    }

    fn render(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: &str| {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        };
        kv("format", "seau-corpus");
        kv("version", "1");
        kv("seed", &self.seed.to_string());
        kv("n_utterances", &self.utterance_count().to_string());
        kv("inventory_hash", &self.inventory_hash);
        kv(
            "config",
            &serde_json::to_string(&self.config).expect("config serializes"),
        );
        kv("lexicon", &self.lexicon.to_manifest());
        for (name, ids) in &self.splits {
            kv(&format!("split.{name}"), &ids.join(","));
        }
        out
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::NotFound(format!("{}: {e}", path.display())))?;
        let mut kv = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Data(format!("manifest line without `=`: {line}")))?;
            kv.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| {
            kv.get(k)
                .ok_or_else(|| Error::Data(format!("manifest lacks `{k}`")))
        };
        if get("format")? != "seau-corpus" {
            return Err(Error::Data("not a corpus manifest".into()));
        }
        let seed = get("seed")?
            .parse()
            .map_err(|_| Error::Data("manifest seed is not an integer".into()))?;
        let config: GeneratorConfig = serde_json::from_str(get("config")?)?;
        let splits = kv
            .iter()
            .filter_map(|(k, v)| {
                k.strip_prefix("split.").map(|name| {
                    let ids = v
                        .split(',')
                        .filter(|s| !s.is_empty())
                        .map(String::from)
                        .collect();
                    (name.to_string(), ids)
                })
            })
            .collect();
        let manifest = Self {
            dir: dir.to_path_buf(),
            seed,
            config,
            inventory_hash: get("inventory_hash")?.clone(),
            lexicon: Lexicon::from_manifest(get("lexicon")?)?,
            splits,
        };
        let declared: usize = get("n_utterances")?
            .parse()
            .map_err(|_| Error::Data("bad n_utterances".into()))?;
        if declared != manifest.utterance_count() {
            return Err(Error::Data(format!(
                "manifest declares {declared} utterances, splits list {}",
                manifest.utterance_count()
            )));
        }
        Ok(manifest)
    }
}

struct Speaker {
    shift: f64,
    tilt: f64,
    gain: f64,
}

const CHANNEL_BUMPS: usize = 3;

/// Per-bin linear gain of a random smooth channel response.
fn channel_response(rng: &mut ChaCha8Rng, dim: usize, max_db: f64) -> Vec<f64> {
    let mut db = vec![0.0; dim];
    if max_db > 0.0 {
        for _ in 0..CHANNEL_BUMPS {
            let height = symmetric(rng, max_db);
            let centre = rng.random_range(0.0..dim as f64);
            let width = rng.random_range(0.06..0.2) * dim as f64;
            for (k, d) in db.iter_mut().enumerate() {
                *d += height * (-(k as f64 - centre).powi(2) / (2.0 * width * width)).exp();
            }
        }
    }
    db.into_iter().map(|d| 10f64.powf(d / 20.0)).collect()
}

/// Renders one utterance (pure function of the seeds and config).
pub fn render_utterance(
    id: &str,
    seed: u64,
    config: &GeneratorConfig,
    inventory: &PhoneInventory,
    lexicon: &Lexicon,
) -> Result<Utterance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = config.signal_dim;
    let n_words = rng.random_range(config.words_per_utterance[0]..=config.words_per_utterance[1]);
    let mut words = Vec::with_capacity(n_words);
    let mut alignment: Vec<u16> = Vec::new();
    // realization index per frame
    let mut realization: Vec<usize> = Vec::new();
    let dur = |rng: &mut ChaCha8Rng| {
        rng.random_range(config.phone_duration[0]..=config.phone_duration[1])
    };
    if config.word_gaps {
        let d = dur(&mut rng);
        alignment.extend(std::iter::repeat_n(SILENCE, d));
        realization.extend(std::iter::repeat_n(0, d));
    }
    for _ in 0..n_words {
        let (w, phones) = &lexicon.words[rng.random_range(0..lexicon.words.len())];
        words.push(w.as_str());
        for &p in phones {
            let d = dur(&mut rng);
            let n_var = inventory.variants[p as usize].len();
            let v = if n_var > 1 {
                rng.random_range(0..n_var)
            } else {
                0
            };
            alignment.extend(std::iter::repeat_n(p, d));
            realization.extend(std::iter::repeat_n(v, d));
        }
        if config.word_gaps {
            let d = dur(&mut rng);
            alignment.extend(std::iter::repeat_n(SILENCE, d));
            realization.extend(std::iter::repeat_n(0, d));
        }
    }
    let sv = &config.speaker;
    let speaker = Speaker {
        shift: symmetric(&mut rng, sv.warp_bins),
        tilt: symmetric(&mut rng, sv.tilt),
        gain: 10f64.powf(symmetric(&mut rng, sv.gain_db) / 20.0),
    };
    let channel = channel_response(&mut rng, dim, sv.channel_db);
    let jitter = &config.frame_jitter;
    let shape = |t: &[f32], s: &Speaker| -> Vec<f64> {
        (0..dim)
            .map(|k| {
                let env = (s.tilt * (k as f64 / (dim - 1) as f64 - 0.5)).exp();
                s.gain * channel[k] * env * interpolate(t, k as f64 - s.shift)
            })
            .collect()
    };
    let t_len = alignment.len();
    let c = config.coarticulation;
    let mut frames = vec![0.0f64; t_len * dim];
    let jittered = jitter.warp_bins > 0.0 || jitter.tilt > 0.0 || jitter.gain_db > 0.0;
    let shaped: Vec<Vec<Vec<f64>>> = inventory
        .variants
        .iter()
        .map(|vs| vs.iter().map(|t| shape(t, &speaker)).collect())
        .collect();
    for t in 0..t_len {
        let p = alignment[t];
        let neighbour = if t + 1 < t_len && alignment[t + 1] != p {
            Some(t + 1)
        } else if t > 0 && alignment[t - 1] != p {
            Some(t - 1)
        } else {
            None
        };
        let raw = |i: usize| &inventory.variants[alignment[i] as usize][realization[i]];
        let (own, other) = if jittered {
            let s = Speaker {
                shift: speaker.shift + symmetric(&mut rng, jitter.warp_bins),
                tilt: speaker.tilt + symmetric(&mut rng, jitter.tilt),
                gain: speaker.gain * 10f64.powf(symmetric(&mut rng, jitter.gain_db) / 20.0),
            };
            (shape(raw(t), &s), neighbour.map(|q| shape(raw(q), &s)))
        } else {
            let pick = |i: usize| shaped[alignment[i] as usize][realization[i]].clone();
            (pick(t), neighbour.map(pick))
        };
        let row = &mut frames[t * dim..(t + 1) * dim];
        match other {
            Some(o) if c > 0.0 => {
                for k in 0..dim {
                    row[k] = (1.0 - c) * own[k] + c * o[k];
                }
            }
            _ => row.copy_from_slice(&own),
        }
    }
    if let Some(snr) = config.snr_db {
        let power = frames.iter().map(|v| v * v).sum::<f64>() / frames.len().max(1) as f64;
        let sigma = (power / 10f64.powf(snr / 10.0)).sqrt();
        let normal = Normal::new(0.0, sigma).map_err(|e| config_err(e.to_string()))?;
        for v in frames.iter_mut() {
            // additive background power: folded so frames stay positive
            *v += normal.sample(&mut rng).abs();
        }
    }
    let signal_frames = Tensor::new(
        &[t_len, dim],
        frames.into_iter().map(|v| v as f32).collect(),
    )?;
    Ok(Utterance {
        id: id.to_string(),
        signal_frames,
        transcript: words.join(" "),
        phone_alignment: alignment,
    })
}

fn symmetric(rng: &mut ChaCha8Rng, max: f64) -> f64 {
    if max > 0.0 {
        rng.random_range(-max..=max)
    } else {
        0.0
    }
}

/// Linear interpolation with edge clamping.
fn interpolate(t: &[f32], x: f64) -> f64 {
    let last = (t.len() - 1) as f64;
    let x = x.clamp(0.0, last);
    let i = x.floor() as usize;
    let f = x - i as f64;
    if i + 1 < t.len() {
        (1.0 - f) * t[i] as f64 + f * t[i + 1] as f64
    } else {
        t[i] as f64
    }
}

pub fn utterance_id(index: usize) -> String {
    format!("utt{index:06}")
}

/// Generates and stores a corpus under `dir`.
pub fn generate_corpus(
    dir: impl AsRef<Path>,
    seed: u64,
    config: &GeneratorConfig,
) -> Result<CorpusManifest> {
    config.validate()?;
    let dir = dir.as_ref();
    let inventory = PhoneInventory::for_config(config)?;
    let lexicon = Lexicon::generate(config)?;
    let mut splits = BTreeMap::new();
    let mut index = 0;
    for (name, count) in SPLIT_NAMES.iter().zip(config.splits.counts()) {
        let ids: Vec<String> = (index..index + count).map(utterance_id).collect();
        index += count;
        splits.insert(name.to_string(), ids);
    }
    let manifest = CorpusManifest {
        dir: dir.to_path_buf(),
        seed,
        config: config.clone(),
        inventory_hash: inventory.hash(),
        lexicon,
        splits,
    };
    for i in 0..index {
        let id = utterance_id(i);
        let utt = render_utterance(
            &id,
            mix_seed(seed, i as u64),
            config,
            &inventory,
            &manifest.lexicon,
        )?;
        let bytes = encode_frame_file(1, &utt.signal_frames, &utt.phone_alignment, &utt.transcript);
        write_atomic(&manifest.utterance_path(&id), &bytes)?;
    }
    write_atomic(&dir.join(MANIFEST_FILE), manifest.render().as_bytes())?;
    Ok(manifest)
}

/// Streams the utterances of a split in manifest order.
pub fn load_split<'m>(
    manifest: &'m CorpusManifest,
    split: &str,
) -> Result<impl Iterator<Item = Result<Utterance>> + 'm> {
    let ids = manifest.split(split)?;
    Ok(ids.iter().map(move |id| load_utterance(manifest, id)))
}

pub fn load_utterance(manifest: &CorpusManifest, id: &str) -> Result<Utterance> {
    let path = manifest.utterance_path(id);
    let file = read_frame_file(&path, id)?;
    if file.version != 1 {
        return Err(Error::Integrity {
            utterance: id.to_string(),
            path,
            reason: format!(
                "expected signal frames (version 1), found version {}",
                file.version
            ),
        });
    }
    Ok(Utterance {
        id: id.to_string(),
        signal_frames: file.frames,
        transcript: file.transcript,
        phone_alignment: file.alignment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GeneratorConfig {
        GeneratorConfig {
            n_phones: 5,
            lexicon_size: 10,
            words_per_utterance: [2, 4],
            splits: SplitSizes {
                labeled: 5,
                unlabeled: 0,
                finetune: 0,
                test: 5,
            },
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn templates_are_unit_norm_and_distinct() {
        let inv = PhoneInventory::generate(3, 16, 64).unwrap();
        for (i, a) in inv.templates.iter().enumerate() {
            let n: f64 = a.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
            assert!(a.iter().all(|&v| v > 0.0));
            for b in &inv.templates[i + 1..] {
                assert!(cosine(a, b) < 0.95);
            }
        }
    }

    #[test]
    fn rejects_invalid_configs() {
        let mut c = small();
        c.n_phones = 1;
        assert!(matches!(
            generate_corpus("/nonexistent", 1, &c),
            Err(Error::Config(_))
        ));
        let mut c = small();
        c.lexicon_size = 0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn alignment_decodes_to_transcript() {
        let c = small();
        let inv = PhoneInventory::generate(c.language_seed, c.n_phones, c.signal_dim).unwrap();
        let lex = Lexicon::generate(&c).unwrap();
        for i in 0..20 {
            let u = render_utterance("u", i, &c, &inv, &lex).unwrap();
            assert_eq!(u.phone_alignment.len(), u.signal_frames.rows());
            assert_eq!(
                lex.transcript_from_alignment(&u.phone_alignment, true)
                    .unwrap(),
                u.transcript
            );
            assert!(u.signal_frames.data().iter().all(|&v| v >= 0.0));
            // every phone run lasts at least the minimum duration
            let mut run = 1;
            for w in u.phone_alignment.windows(2) {
                if w[0] == w[1] {
                    run += 1;
                } else {
                    assert!(run >= c.phone_duration[0]);
                    run = 1;
                }
            }
        }
    }

    #[test]
    fn noiseless_single_phone_word_reproduces_template() {
        let c = GeneratorConfig {
            n_phones: 2,
            lexicon_size: 1,
            word_phones: [1, 1],
            words_per_utterance: [1, 1],
            snr_db: None,
            speaker: SpeakerVariation::none(),
            coarticulation: 0.0,
            word_gaps: false,
            ..small()
        };
        let inv = PhoneInventory::generate(c.language_seed, c.n_phones, c.signal_dim).unwrap();
        let lex = Lexicon::generate(&c).unwrap();
        let u = render_utterance("u", 9, &c, &inv, &lex).unwrap();
        let phone = lex.words[0].1[0] as usize;
        for t in 0..u.signal_frames.rows() {
            assert_eq!(u.signal_frames.row(t), inv.templates[phone].as_slice());
        }
    }
}
