//! k-means codebooks over frame features, unit assignment, unit files and
//! unit-quality metrics against phone alignments.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seau_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::format::{write_atomic, Cursor, CODEBOOK_MAGIC, UNIT_MAGIC};
use crate::frontend::{FeatureKind, Normalizer};
use crate::nn::subsampled_len;

pub const UNIT_FILE_VERSION: u32 = 1;
/// Frames per unit: the encoder reduces time 4x.
pub const UNIT_STRIDE: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KmeansConfig {
    pub clusters: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop when the relative inertia improvement falls below this.
    pub tol: f64,
    /// Frames kept (uniform reservoir sample) for fitting.
    pub max_frames: usize,
}

impl Default for KmeansConfig {
    fn default() -> Self {
        Self {
            clusters: 1000,
            seed: 0,
            max_iter: 100,
            tol: 1e-4,
            max_frames: 2_000_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    /// `C x D`.
    #[serde(skip, default = "empty_centroids")]
    pub centroids: Tensor<f32>,
    pub feature_kind: FeatureKind,
    /// Encoder block the features came from, if any.
    pub layer: Option<usize>,
    pub inertia_history: Vec<f64>,
    /// Applied to raw features before assignment.
    pub normalizer: Option<Normalizer>,
}

fn empty_centroids() -> Tensor<f32> {
    Tensor::zeros(&[0, 0])
}

impl Codebook {
    pub fn clusters(&self) -> usize {
        self.centroids.rows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols()
    }

    /// Normalizes (when a normalizer is attached) and assigns.
    pub fn assign_raw(&self, features: &Tensor<f32>) -> Result<Vec<u16>> {
        match &self.normalizer {
            Some(n) => assign_units(self, &n.apply_frames(features)?),
            None => assign_units(self, features),
        }
    }

    /// `<path>` holds the centroids, `<path>.json` the metadata.
    pub fn save(&self, path: &Path) -> Result<()> {
        let (c, d) = (self.clusters(), self.dim());
        let mut out = Vec::with_capacity(16 + 4 * c * d);
        out.extend_from_slice(CODEBOOK_MAGIC);
        out.extend_from_slice(&(c as u32).to_le_bytes());
        out.extend_from_slice(&(d as u32).to_le_bytes());
        for v in self.centroids.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        write_atomic(path, &out)?;
        write_atomic(
            &sidecar(path),
            serde_json::to_string_pretty(self)?.as_bytes(),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let mut c = Cursor::new(&bytes, "codebook", path);
        if c.take(8, "magic")? != CODEBOOK_MAGIC {
            return Err(c.fail("bad codebook magic"));
        }
        let n = c.u32("cluster count")? as usize;
        let d = c.u32("dim")? as usize;
        let data = c.f32s(n * d, "centroids")?;
        c.finish()?;
        let mut book: Codebook = serde_json::from_str(&std::fs::read_to_string(sidecar(path))?)?;
        book.centroids = Tensor::new(&[n, d], data)?;
        Ok(book)
    }
}

fn sidecar(path: &Path) -> std::path::PathBuf {
    let mut p = path.to_path_buf();
    p.as_mut_os_string().push(".json");
    p
}

/// Uniform reservoir sample of frames from a stream.
pub struct FrameReservoir {
    cap: usize,
    dim: Option<usize>,
    seen: usize,
    data: Vec<f32>,
    rng: ChaCha8Rng,
}

impl FrameReservoir {
    pub fn new(cap: usize, seed: u64) -> Self {
        Self {
            cap,
            dim: None,
            seen: 0,
            data: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn push(&mut self, frames: &Tensor<f32>) -> Result<()> {
        let d = frames.cols();
        match self.dim {
            None => self.dim = Some(d),
            Some(prev) if prev != d => {
                return Err(Error::Data(format!(
                    "frame dimension changed from {prev} to {d}"
                )));
            }
            _ => {}
        }
        for i in 0..frames.rows() {
            let row = frames.row(i);
            if self.seen < self.cap {
                self.data.extend_from_slice(row);
            } else {
                let j = self.rng.random_range(0..=self.seen);
                if j < self.cap {
                    self.data[j * d..(j + 1) * d].copy_from_slice(row);
                }
            }
            self.seen += 1;
        }
        Ok(())
    }

    pub fn seen(&self) -> usize {
        self.seen
    }

    pub fn into_tensor(self) -> Result<Tensor<f32>> {
        let d = self.dim.unwrap_or(0);
        let n = if d == 0 { 0 } else { self.data.len() / d };
        Ok(Tensor::new(&[n, d], self.data)?)
    }
}

fn sq_dist(a: &[f32], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, c)| (*x as f64 - c).powi(2)).sum()
}

/// Nearest centroid and its squared distance; ties go to the lowest index.
fn nearest(x: &[f32], centroids: &[f64], d: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.chunks(d).enumerate() {
        let dist = sq_dist(x, c);
        if dist < best.1 {
            best = (k, dist);
        }
    }
    best
}

/// k-means++ seeding followed by Lloyd iterations, in double precision.
pub fn kmeans_fit(
    frames: &Tensor<f32>,
    config: &KmeansConfig,
    feature_kind: FeatureKind,
) -> Result<Codebook> {
    let (n, d) = (frames.rows(), frames.cols());
    let c = config.clusters;
    if c < 2 {
        return Err(config_err("k-means needs at least 2 clusters"));
    }
    if n < c {
        return Err(Error::InsufficientData(format!(
            "{n} frames for {c} clusters"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let row = |i: usize| frames.row(i);
    let to64 = |r: &[f32]| r.iter().map(|v| *v as f64).collect::<Vec<f64>>();

    let mut centroids: Vec<f64> = to64(row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), &centroids)).collect();
    for _ in 1..c {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            return Err(Error::InsufficientData(format!(
                "fewer than {c} distinct frames"
            )));
        }
        let mut target = rng.random_range(0.0..total);
        let mut pick = n - 1;
        for (i, w) in d2.iter().enumerate() {
            if target < *w {
                pick = i;
                break;
            }
            target -= w;
        }
        if d2[pick] <= 0.0 {
            pick = (0..n).rev().find(|&i| d2[i] > 0.0).unwrap_or(pick);
        }
        let newc = to64(row(pick));
        for (i, v) in d2.iter_mut().enumerate() {
            *v = v.min(sq_dist(row(i), &newc));
        }
        centroids.extend(newc);
    }

    let mut history: Vec<f64> = Vec::new();
    let mut assign = vec![0usize; n];
    let mut dist = vec![0.0f64; n];
    for _ in 0..config.max_iter.max(1) {
        for i in 0..n {
            let (k, dd) = nearest(row(i), &centroids, d);
            assign[i] = k;
            dist[i] = dd;
        }
        let inertia: f64 = dist.iter().sum();
        if let Some(&prev) = history.last() {
            if inertia > prev {
                break;
            }
        }
        history.push(inertia);
        let converged = history.len() >= 2 && {
            let prev = history[history.len() - 2];
            prev <= 0.0 || (prev - inertia) / prev < config.tol
        };
        if converged || inertia == 0.0 || history.len() > config.max_iter {
            break;
        }
        let mut sums = vec![0.0f64; c * d];
        let mut counts = vec![0usize; c];
        for i in 0..n {
            counts[assign[i]] += 1;
            for (s, x) in sums[assign[i] * d..(assign[i] + 1) * d]
                .iter_mut()
                .zip(row(i))
            {
                *s += *x as f64;
            }
        }
        let mut taken = vec![false; n];
        for k in 0..c {
            if counts[k] > 0 {
                for j in 0..d {
                    centroids[k * d + j] = sums[k * d + j] / counts[k] as f64;
                }
            } else {
                // reseed from the point farthest from its centroid
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
                    .ok_or_else(|| {
                        Error::InsufficientData("no frame to reseed an empty cluster".into())
                    })?;
                taken[far] = true;
                dist[far] = 0.0;
                centroids[k * d..(k + 1) * d].copy_from_slice(&to64(row(far)));
            }
        }
    }
    let centroids = Tensor::new(&[c, d], centroids.into_iter().map(|v| v as f32).collect())?;
    for a in 0..c {
        for b in a + 1..c {
            if centroids.row(a) == centroids.row(b) {
                return Err(Error::InsufficientData(format!(
                    "centroids {a} and {b} coincide"
                )));
            }
        }
    }
    Ok(Codebook {
        centroids,
        feature_kind,
        layer: None,
        inertia_history: history,
        normalizer: None,
    })
}

/// Nearest centroid (squared Euclidean) for every frame.
pub fn assign_units(codebook: &Codebook, features: &Tensor<f32>) -> Result<Vec<u16>> {
    let d = codebook.dim();
    if features.rank() != 2 || features.cols() != d {
        return Err(Error::Autodiff(seau_autodiff::Error::Shape {
            op: "assign_units",
            lhs: features.shape().to_vec(),
            rhs: codebook.centroids.shape().to_vec(),
        }));
    }
    let cents: Vec<f64> = codebook
        .centroids
        .data()
        .iter()
        .map(|v| *v as f64)
        .collect();
    Ok((0..features.rows())
        .map(|i| nearest(features.row(i), &cents, d).0 as u16)
        .collect())
}

/// Total squared distance of `frames` to their nearest centroids.
pub fn inertia(codebook: &Codebook, frames: &Tensor<f32>) -> f64 {
    let cents: Vec<f64> = codebook
        .centroids
        .data()
        .iter()
        .map(|v| *v as f64)
        .collect();
    (0..frames.rows())
        .map(|i| nearest(frames.row(i), &cents, codebook.dim()).1)
        .sum()
}

/// Mean of each `UNIT_STRIDE`-frame window, giving one row per unit step.
pub fn pool_to_unit_rate(frames: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (t, d) = (frames.rows(), frames.cols());
    let tp = subsampled_len(t);
    let mut out = vec![0.0f32; tp * d];
    for j in 0..tp {
        let (s, e) = (j * UNIT_STRIDE, ((j + 1) * UNIT_STRIDE).min(t));
        for i in s..e {
            for (o, x) in out[j * d..(j + 1) * d].iter_mut().zip(frames.row(i)) {
                *o += x;
            }
        }
        out[j * d..(j + 1) * d]
            .iter_mut()
            .for_each(|v| *v /= (e - s) as f32);
    }
    Ok(Tensor::new(&[tp, d], out)?)
}

/// Phone at the centre of each unit-rate window.
pub fn downsample_alignment(alignment: &[u16]) -> Vec<u16> {
    let t = alignment.len();
    (0..subsampled_len(t))
        .map(|j| {
            let (s, e) = (j * UNIT_STRIDE, ((j + 1) * UNIT_STRIDE).min(t));
            alignment[(s + e) / 2]
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitQualityReport {
    pub cluster_purity: f64,
    pub phone_purity: f64,
    pub pnmi: f64,
    pub switch_rate: f64,
    pub n_frames: usize,
}

/// Joint (unit, phone) counts.
#[derive(Clone, Debug, Default)]
pub struct Contingency {
    pub counts: std::collections::BTreeMap<(u16, u16), u64>,
    pub total: u64,
}

impl Contingency {
    pub fn add(&mut self, unit: u16, phone: u16) {
        *self.counts.entry((unit, phone)).or_insert(0) += 1;
        self.total += 1;
    }

    fn marginal(&self, by_unit: bool) -> std::collections::BTreeMap<u16, u64> {
        let mut m = std::collections::BTreeMap::new();
        for (&(u, p), &n) in &self.counts {
            *m.entry(if by_unit { u } else { p }).or_insert(0) += n;
        }
        m
    }

    /// Sum over `a` of the largest joint mass with any `b`.
    fn purity(&self, by_unit: bool) -> f64 {
        let mut best = std::collections::BTreeMap::<u16, u64>::new();
        for (&(u, p), &n) in &self.counts {
            let key = if by_unit { u } else { p };
            let e = best.entry(key).or_insert(0);
            *e = (*e).max(n);
        }
        best.values().sum::<u64>() as f64 / self.total as f64
    }

    pub fn report(&self, switches: usize, pairs: usize) -> UnitQualityReport {
        let n = self.total as f64;
        let pu = self.marginal(true);
        let pp = self.marginal(false);
        let h_phone: f64 = pp
            .values()
            .map(|&c| c as f64 / n)
            .map(|p| -p * p.ln())
            .sum();
        let mi: f64 = self
            .counts
            .iter()
            .map(|(&(u, p), &c)| {
                let pj = c as f64 / n;
                pj * (pj / ((pu[&u] as f64 / n) * (pp[&p] as f64 / n))).ln()
            })
            .sum();
        // a single phone is fully explained by any labelling
        let pnmi = if h_phone > 0.0 {
            (mi / h_phone).clamp(0.0, 1.0)
        } else {
            1.0
        };
        UnitQualityReport {
            cluster_purity: self.purity(true),
            phone_purity: self.purity(false),
            pnmi,
            switch_rate: if pairs == 0 {
                0.0
            } else {
                switches as f64 / pairs as f64
            },
            n_frames: self.total as usize,
        }
    }
}

/// Scores unit sequences against phone sequences already at the unit rate.
pub fn unit_quality(units: &[Vec<u16>], phones: &[Vec<u16>]) -> Result<UnitQualityReport> {
    if units.len() != phones.len() {
        return Err(Error::Alignment(format!(
            "{} unit sequences vs {} alignments",
            units.len(),
            phones.len()
        )));
    }
    let mut table = Contingency::default();
    let (mut switches, mut pairs) = (0, 0);
    for (i, (u, p)) in units.iter().zip(phones).enumerate() {
        if u.len() != p.len() {
            return Err(Error::Alignment(format!(
                "sequence {i}: {} units vs {} aligned phones",
                u.len(),
                p.len()
            )));
        }
        for (&a, &b) in u.iter().zip(p) {
            table.add(a, b);
        }
        switches += u.windows(2).filter(|w| w[0] != w[1]).count();
        pairs += u.len().saturating_sub(1);
    }
    if table.total == 0 {
        return Err(Error::InsufficientData("no frames to score".into()));
    }
    Ok(table.report(switches, pairs))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnitSequence {
    pub utterance: String,
    pub units: Vec<u16>,
    pub clusters: usize,
}

pub fn encode_unit_file(seq: &UnitSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 2 * seq.units.len());
    out.extend_from_slice(UNIT_MAGIC);
    for v in [
        UNIT_FILE_VERSION,
        seq.units.len() as u32,
        seq.clusters as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for u in &seq.units {
        out.extend_from_slice(&u.to_le_bytes());
    }
    out
}

pub fn write_unit_file(path: &Path, seq: &UnitSequence) -> Result<()> {
    write_atomic(path, &encode_unit_file(seq))
}

pub fn read_unit_file(path: &Path, id: &str) -> Result<UnitSequence> {
    let bytes = std::fs::read(path).map_err(|e| Error::Integrity {
        utterance: id.to_string(),
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut c = Cursor::new(&bytes, id, path);
    if c.take(8, "magic")? != UNIT_MAGIC {
        return Err(c.fail("bad unit-file magic"));
    }
    let version = c.u32("version")?;
    if version != UNIT_FILE_VERSION {
        return Err(c.fail(format!("unsupported unit-file version {version}")));
    }
    let t = c.u32("length")? as usize;
    let clusters = c.u32("cluster count")? as usize;
    let units = c.u16s(t, "units")?;
    c.finish()?;
    if let Some(bad) = units.iter().find(|&&u| u as usize >= clusters) {
        return Err(c.fail(format!("unit {bad} >= {clusters} clusters")));
    }
    Ok(UnitSequence {
        utterance: id.to_string(),
        units,
        clusters,
    })
}
