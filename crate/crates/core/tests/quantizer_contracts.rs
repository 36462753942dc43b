use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seau::frontend::FeatureKind;
use seau::quantizer::{assign_units, inertia, kmeans_fit, unit_quality, Codebook, KmeansConfig};
use seau_autodiff::Tensor;

fn random_frames(n: usize, d: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[n, d], |_| rng.random_range(-1.0f32..1.0))
}

fn cfg(clusters: usize, seed: u64) -> KmeansConfig {
    KmeansConfig {
        clusters,
        seed,
        max_iter: 50,
        tol: 0.0,
        ..KmeansConfig::default()
    }
}

/// Lowest-index nearest centroid by exhaustive scan in f64.
fn oracle_assign(book: &Codebook, frames: &Tensor<f32>) -> Vec<u16> {
    (0..frames.rows())
        .map(|i| {
            let x = frames.row(i);
            let mut best = (0usize, f64::INFINITY);
            for c in 0..book.clusters() {
                let d: f64 = book
                    .centroids
                    .row(c)
                    .iter()
                    .zip(x)
                    .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
                    .sum();
                if d < best.1 {
                    best = (c, d);
                }
            }
            best.0 as u16
        })
        .collect()
}

#[test]
fn assignment_matches_exhaustive_scan_on_10k_frames() {
    let book = kmeans_fit(&random_frames(2000, 8, 1), &cfg(16, 3), FeatureKind::Mfcc).unwrap();
    let frames = random_frames(10_000, 8, 2);
    assert_eq!(
        assign_units(&book, &frames).unwrap(),
        oracle_assign(&book, &frames)
    );
}

#[test]
fn ties_go_to_lowest_centroid() {
    let book = Codebook {
        centroids: Tensor::new(&[2, 1], vec![-1.0, 1.0]).unwrap(),
        feature_kind: FeatureKind::Mfcc,
        layer: None,
        inertia_history: vec![],
        normalizer: None,
    };
    let x = Tensor::new(&[1, 1], vec![0.0]).unwrap();
    assert_eq!(assign_units(&book, &x).unwrap(), vec![0]);
}

#[test]
fn recovers_three_separated_blobs() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let centres = [[0.0f32, 0.0], [20.0, 0.0], [0.0, 20.0]];
    let mut data = Vec::new();
    let mut truth = Vec::new();
    for i in 0..300 {
        let c = i % 3;
        data.push(centres[c][0] + rng.random_range(-0.5..0.5));
        data.push(centres[c][1] + rng.random_range(-0.5..0.5));
        truth.push(c);
    }
    let frames = Tensor::new(&[300, 2], data).unwrap();
    for seed in 0..5 {
        let book = kmeans_fit(&frames, &cfg(3, seed), FeatureKind::Mfcc).unwrap();
        let units = assign_units(&book, &frames).unwrap();
        // the labelling is a bijection onto the true blobs
        let mut map = [None; 3];
        for (u, &t) in units.iter().zip(&truth) {
            let slot = &mut map[t];
            assert!(
                slot.is_none() || *slot == Some(*u),
                "seed {seed}: blob {t} split"
            );
            *slot = Some(*u);
        }
        let mut ids: Vec<u16> = map.iter().map(|m| m.unwrap()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 3);
        for c in 0..3 {
            let row = book.centroids.row(map[c].unwrap() as usize);
            assert!((row[0] - centres[c][0]).abs() < 0.2 && (row[1] - centres[c][1]).abs() < 0.2);
        }
    }
}

#[test]
fn too_few_frames_is_insufficient_data() {
    let err = kmeans_fit(&random_frames(3, 2, 0), &cfg(4, 0), FeatureKind::Mfcc).unwrap_err();
    assert!(matches!(err, seau::Error::InsufficientData(_)));
}

fn entropy(counts: &[f64], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| -(c / n) * (c / n).ln())
        .sum()
}

/// PNMI and purities computed directly from a dense contingency table.
fn oracle_quality(units: &[u16], phones: &[u16]) -> (f64, f64, f64) {
    let nu = *units.iter().max().unwrap() as usize + 1;
    let np = *phones.iter().max().unwrap() as usize + 1;
    let mut table = vec![vec![0.0f64; np]; nu];
    for (&u, &p) in units.iter().zip(phones) {
        table[u as usize][p as usize] += 1.0;
    }
    let n = units.len() as f64;
    let row: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let col: Vec<f64> = (0..np).map(|p| table.iter().map(|r| r[p]).sum()).collect();
    let joint: Vec<f64> = table.iter().flatten().copied().collect();
    let mi = entropy(&row, n) + entropy(&col, n) - entropy(&joint, n);
    let h_phone = entropy(&col, n);
    let pnmi = if h_phone > 0.0 { mi / h_phone } else { 1.0 };
    let cluster_purity = table
        .iter()
        .map(|r| r.iter().cloned().fold(0.0, f64::max))
        .sum::<f64>()
        / n;
    let phone_purity = (0..np)
        .map(|p| table.iter().map(|r| r[p]).fold(0.0, f64::max))
        .sum::<f64>()
        / n;
    (pnmi, cluster_purity, phone_purity)
}

proptest! {
    #[test]
    fn unit_metrics_match_contingency_oracle(
        pairs in prop::collection::vec((0u16..12, 0u16..6), 1..400),
        split in 0usize..400,
    ) {
        let units: Vec<u16> = pairs.iter().map(|p| p.0).collect();
        let phones: Vec<u16> = pairs.iter().map(|p| p.1).collect();
        let k = split.min(units.len());
        let report = unit_quality(
            &[units[..k].to_vec(), units[k..].to_vec()],
            &[phones[..k].to_vec(), phones[k..].to_vec()],
        ).unwrap();
        let (pnmi, cp, pp) = oracle_quality(&units, &phones);
        prop_assert!((report.pnmi - pnmi.clamp(0.0, 1.0)).abs() < 1e-9);
        prop_assert!((report.cluster_purity - cp).abs() < 1e-9);
        prop_assert!((report.phone_purity - pp).abs() < 1e-9);
    }

    #[test]
    fn pnmi_is_invariant_to_relabelling_units(
        pairs in prop::collection::vec((0u16..8, 0u16..5), 1..200),
        shift in 1u16..8,
    ) {
        let units: Vec<u16> = pairs.iter().map(|p| p.0).collect();
        let relabelled: Vec<u16> = units.iter().map(|u| (u + shift) % 8).collect();
        let phones: Vec<u16> = pairs.iter().map(|p| p.1).collect();
        let a = unit_quality(&[units], std::slice::from_ref(&phones)).unwrap();
        let b = unit_quality(&[relabelled], &[phones]).unwrap();
        prop_assert!((a.pnmi - b.pnmi).abs() < 1e-12);
        prop_assert!((a.cluster_purity - b.cluster_purity).abs() < 1e-12);
    }

    #[test]
    fn inertia_never_increases(seed in 0u64..1000, clusters in 2usize..10) {
        let frames = random_frames(200, 3, seed);
        let book = kmeans_fit(&frames, &cfg(clusters, seed), FeatureKind::Mfcc).unwrap();
        let h = &book.inertia_history;
        prop_assert!(!h.is_empty());
        for w in h.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", h);
        }
        let last = *h.last().unwrap();
        prop_assert!((inertia(&book, &frames) - last).abs() <= 1e-6 * last.max(1.0));
    }
}

#[test]
fn perfect_alignment_gives_pnmi_one() {
    let phones: Vec<u16> = (0..500).map(|i| (i * 7 % 13) as u16).collect();
    let units: Vec<u16> = phones.iter().map(|p| 12 - p).collect();
    let r = unit_quality(&[units], &[phones]).unwrap();
    assert!((r.pnmi - 1.0).abs() < 1e-12);
    assert_eq!(r.cluster_purity, 1.0);
}

#[test]
fn constant_units_carry_no_information() {
    let phones: Vec<u16> = (0..100).map(|i| (i % 4) as u16).collect();
    let r = unit_quality(&[vec![0; 100]], &[phones]).unwrap();
    assert!(r.pnmi.abs() < 1e-12);
    assert!((r.cluster_purity - 0.25).abs() < 1e-12);
}

#[test]
fn codebook_round_trips_through_disk() {
    let book = kmeans_fit(
        &random_frames(100, 4, 5),
        &cfg(5, 1),
        FeatureKind::EncoderLayer,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("codebook.bin");
    book.save(&path).unwrap();
    assert_eq!(Codebook::load(&path).unwrap(), book);
}
