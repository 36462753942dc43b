use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seau::nn::EncoderConfig;
use seau::pretrain::{
    masked_prediction_loss, pretrain_loop, sample_mask, unit_distribution, MaskSpec,
    PretrainConfig, PretrainExample, PretrainModel,
};
use seau_autodiff::{Checkpoint, Graph, Mode, ParamStore, Tensor};

fn tiny_encoder() -> EncoderConfig {
    EncoderConfig {
        input_dim: 8,
        extractor_channels: 2,
        n_blocks: 2,
        model_dim: 8,
        ffn_dim: 12,
        n_heads: 2,
        conv_kernel: 3,
        dropout: 0.0,
        layerdrop: 0.0,
        projection_dim: 6,
        positional_encoding: false,
    }
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f32> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn model(clusters: usize, seed: u64) -> (ParamStore, PretrainModel) {
    let mut store = ParamStore::new();
    let m = PretrainModel::new(&mut store, &tiny_encoder(), clusters, 0.1, 0.1, seed).unwrap();
    (store, m)
}

#[test]
fn mask_coverage_matches_span_start_probability() {
    let spec = MaskSpec {
        mask_prob: 0.08,
        span_len: 10,
    };
    let len = 300;
    let trials = 2000;
    let mut covered = vec![0usize; len];
    for s in 0..trials {
        for (c, m) in covered.iter_mut().zip(sample_mask(len, &spec, s).unwrap()) {
            *c += usize::from(m);
        }
    }
    // frame j is covered unless none of the min(j + 1, span) starts before it fires
    let expected: Vec<f64> = (0..len)
        .map(|j| 1.0 - (1.0 - spec.mask_prob).powi((j + 1).min(spec.span_len) as i32))
        .collect();
    let mean_obs = covered.iter().sum::<usize>() as f64 / (len as u64 * trials) as f64;
    let mean_exp = expected.iter().sum::<f64>() / len as f64;
    assert!(
        (mean_obs - mean_exp).abs() < 0.01,
        "{mean_obs} vs {mean_exp}"
    );
    let first = covered[0] as f64 / trials as f64;
    assert!(
        (first - spec.mask_prob).abs() < 0.02,
        "frame 0 covered {first}"
    );
}

#[test]
fn mask_rejects_short_inputs_and_bad_specs() {
    let spec = MaskSpec {
        mask_prob: 0.5,
        span_len: 4,
    };
    assert!(matches!(
        sample_mask(3, &spec, 0),
        Err(seau::Error::InputTooShort(_))
    ));
    let bad = MaskSpec {
        mask_prob: 1.0,
        span_len: 4,
    };
    assert!(sample_mask(10, &bad, 0).is_err());
}

proptest! {
    #[test]
    fn mask_is_never_empty_and_seeded(len in 4usize..60, seed in any::<u64>(), p in 0.001f64..0.5) {
        let spec = MaskSpec { mask_prob: p, span_len: 3 };
        let a = sample_mask(len, &spec, seed).unwrap();
        prop_assert_eq!(a.len(), len);
        prop_assert!(a.iter().any(|&m| m));
        prop_assert_eq!(a, sample_mask(len, &spec, seed).unwrap());
    }
}

#[test]
fn unit_distribution_sums_to_one_and_argmax_is_scale_invariant() {
    let (store, m) = model(16, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let h: Vec<f32> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
        let p = unit_distribution(&m.head, &store, &h).unwrap();
        assert_eq!(p.len(), 16);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        let scale = rng.random_range(0.01f32..100.0);
        let hs: Vec<f32> = h.iter().map(|v| v * scale).collect();
        let q = unit_distribution(&m.head, &store, &hs).unwrap();
        let argmax = |v: &[f64]| (0..v.len()).fold(0, |b, k| if v[k] > v[b] { k } else { b });
        assert_eq!(argmax(&p), argmax(&q));
    }
}

fn flatten_embeddings(store: &mut ParamStore, m: &PretrainModel) {
    let e = store.value_mut(m.head.embeddings);
    let d = e.cols();
    let first: Vec<f32> = e.data()[..d].to_vec();
    for row in e.data_mut().chunks_mut(d) {
        row.copy_from_slice(&first);
    }
}

#[test]
fn identical_embeddings_give_exactly_uniform_distribution() {
    for c in [2, 7, 32] {
        let (mut store, m) = model(c, 5);
        flatten_embeddings(&mut store, &m);
        let p = unit_distribution(&m.head, &store, &[0.3, -1.0, 2.0, 0.0, 0.5, 0.1, -0.7, 1.1])
            .unwrap();
        for v in p {
            assert_eq!(v, 1.0 / c as f64);
        }
    }
}

/// Masked-prediction loss of the full encoder and head for one utterance.
fn encoder_loss(
    store: &ParamStore,
    m: &PretrainModel,
    x: &Tensor<f32>,
    units: &[u16],
    mask: &[bool],
) -> f32 {
    let mut g = Graph::new(store, Mode::Train);
    let v = m.encoder.features(&mut g, x).unwrap();
    let out = m
        .encoder
        .forward(&mut g, v, Some((mask, m.mask_emb)), 9)
        .unwrap();
    let logits = m.head.logits(&mut g, out.hidden).unwrap();
    let l = masked_prediction_loss(&mut g, logits, units, mask).unwrap();
    g.value(l).item()
}

#[test]
fn unmasked_targets_do_not_affect_the_loss() {
    let (store, m) = model(8, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..20 {
        let x = random(&[40, 8], &mut rng);
        let t = 10;
        let mask = sample_mask(
            t,
            &MaskSpec {
                mask_prob: 0.2,
                span_len: 2,
            },
            trial,
        )
        .unwrap();
        let units: Vec<u16> = (0..t).map(|_| rng.random_range(0..8)).collect();
        let mut changed = units.clone();
        for (u, &masked) in changed.iter_mut().zip(&mask) {
            if !masked {
                *u = (*u + 1 + rng.random_range(0..7)) % 8;
            }
        }
        let a = encoder_loss(&store, &m, &x, &units, &mask);
        let b = encoder_loss(&store, &m, &x, &changed, &mask);
        assert_eq!(a.to_bits(), b.to_bits(), "trial {trial}");
    }
}

#[test]
fn uniform_head_loss_is_log_c() {
    for c in [4, 16, 100] {
        let (mut store, m) = model(c, 4);
        flatten_embeddings(&mut store, &m);
        let mut rng = ChaCha8Rng::seed_from_u64(c as u64);
        let x = random(&[32, 8], &mut rng);
        let units: Vec<u16> = (0..8).map(|_| rng.random_range(0..c as u16)).collect();
        let mask = vec![true, false, true, true, false, false, true, true];
        let l = encoder_loss(&store, &m, &x, &units, &mask) as f64;
        assert!((l - (c as f64).ln()).abs() < 1e-5, "C={c}: {l}");
    }
}

fn toy_data(n: usize, clusters: u16, seed: u64) -> Vec<PretrainExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            // units follow the sign pattern of the first input dimension
            let x = random(&[24, 8], &mut rng);
            let units = (0..6)
                .map(|j| {
                    let s: f32 = (0..4).map(|k| x.row(4 * j + k)[0]).sum();
                    if s > 0.0 {
                        0
                    } else {
                        1 + rng.random_range(0..clusters - 1)
                    }
                })
                .collect();
            PretrainExample {
                id: format!("u{i}"),
                features: x,
                units,
            }
        })
        .collect()
}

fn tiny_cfg(steps: u64) -> PretrainConfig {
    PretrainConfig {
        steps,
        batch_size: 4,
        warmup_steps: 5,
        peak_lr: 3e-3,
        mask: MaskSpec {
            mask_prob: 0.3,
            span_len: 2,
        },
        log_interval: 5,
        checkpoint_interval: 0,
        seed: 17,
        ..PretrainConfig::toy()
    }
}

#[test]
fn loss_decreases_on_learnable_units() {
    let data = toy_data(32, 4, 1);
    let out = pretrain_loop(&tiny_encoder(), &tiny_cfg(150), 4, &data, None, None).unwrap();
    let h = &out.history;
    let mean =
        |s: &[seau::pretrain::StepMetrics]| s.iter().map(|m| m.loss).sum::<f64>() / s.len() as f64;
    let (first, last) = (mean(&h[..20]), mean(&h[h.len() - 20..]));
    assert!(last < 0.8 * first, "loss {first} -> {last}");
}

fn params(ckpt: &Checkpoint) -> Vec<(String, Vec<u32>)> {
    ckpt.tensors
        .iter()
        .map(|(name, t)| (name.clone(), t.data().iter().map(|v| v.to_bits()).collect()))
        .collect()
}

#[test]
fn identical_seeds_and_resume_are_bit_exact() {
    let data = toy_data(12, 4, 3);
    let enc = tiny_encoder();
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (
        dir.path().join("a"),
        dir.path().join("b"),
        dir.path().join("c"),
    );
    let cfg = PretrainConfig {
        checkpoint_interval: 10,
        ..tiny_cfg(20)
    };
    pretrain_loop(&enc, &cfg, 4, &data, Some(&a), None).unwrap();
    pretrain_loop(&enc, &cfg, 4, &data, Some(&b), None).unwrap();
    let fa = std::fs::read(a.join("final.ckpt")).unwrap();
    assert_eq!(fa, std::fs::read(b.join("final.ckpt")).unwrap());

    let half = Checkpoint::load(a.join("step_10.ckpt")).unwrap();
    pretrain_loop(&enc, &cfg, 4, &data, Some(&c), Some(&half)).unwrap();
    let full = Checkpoint::load(a.join("final.ckpt")).unwrap();
    let resumed = Checkpoint::load(c.join("final.ckpt")).unwrap();
    assert_eq!(params(&full), params(&resumed));
}

#[test]
fn rejects_mismatched_units() {
    let mut data = toy_data(2, 4, 0);
    data[0].units.pop();
    assert!(pretrain_loop(&tiny_encoder(), &tiny_cfg(1), 4, &data, None, None).is_err());
    let mut data = toy_data(2, 4, 0);
    data[1].units[0] = 9;
    assert!(pretrain_loop(&tiny_encoder(), &tiny_cfg(1), 4, &data, None, None).is_err());
}
