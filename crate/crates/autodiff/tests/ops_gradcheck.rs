//! Every operator's vector-Jacobian product against central finite
//! differences computed in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seau_autodiff::gradcheck::{max_relative_error, numeric_gradient};
use seau_autodiff::{Graph, Mode, ParamStore, Result, Tensor, Var};

const H: f64 = 1e-3;
const TOL: f64 = 1e-4;
const FLOOR: f64 = 1e-3;
const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

/// Values in `±[lo, hi]`, keeping away from kinks at zero.
fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let mag = rng.random_range(lo..hi);
        if rng.random::<bool>() {
            mag
        } else {
            -mag
        }
    })
}

fn positive(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(0.2..2.0))
}

/// Builds `sum(f(inputs) * w)` for a fixed random `w`, and compares its
/// analytic gradient w.r.t. every input with finite differences.
fn check<F>(name: &str, seed: u64, inputs: Vec<Tensor<f64>>, f: F) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let store = ParamStore::<f64>::new();
    let loss = |vals: &[Tensor<f64>], want_grad: bool| -> (f64, Vec<Vec<f64>>) {
        let mut g = Graph::new(&store, Mode::Train);
        let vars: Vec<Var> = vals
            .iter()
            .map(|t| g.variable(t.clone()).unwrap())
            .collect();
        let out = f(&mut g, &vars).unwrap();
        let shape = g.shape(out).to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let w = g
            .constant(Tensor::from_fn(&shape, |_| rng.random_range(-1.0..1.0)))
            .unwrap();
        let prod = g.mul(out, w).unwrap();
        let l = g.sum(prod).unwrap();
        let value = g.value(l).item();
        if !want_grad {
            return (value, Vec::new());
        }
        let grads = g.backward(l).unwrap();
        let gs = vars
            .iter()
            .zip(vals)
            .map(|(v, t)| {
                grads
                    .wrt(*v)
                    .map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec)
            })
            .collect();
        (value, gs)
    };
    let (_, analytic) = loss(&inputs, true);
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let numeric = numeric_gradient(input.data(), H, |x| {
            let mut vals = inputs.clone();
            vals[k] = Tensor::new(input.shape(), x.to_vec()).unwrap();
            loss(&vals, false).0
        });
        worst = worst.max(max_relative_error(&analytic[k], &numeric, FLOOR));
    }
    assert!(
        worst < TOL,
        "{name} seed {seed}: max relative error {worst:e}"
    );
    worst
}

fn each_seed(name: &str, mut build: impl FnMut(u64, &mut ChaCha8Rng) -> f64) {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let err = build(seed, &mut rng);
        assert!(err < TOL, "{name}");
    }
}

#[test]
fn matmul() {
    each_seed("matmul", |s, rng| {
        let (m, k, n) = (
            rng.random_range(1..5),
            rng.random_range(1..5),
            rng.random_range(1..5),
        );
        let a = rand_tensor(rng, &[m, k], 0.1, 1.0);
        let b = rand_tensor(rng, &[k, n], 0.1, 1.0);
        check("matmul", s, vec![a, b], |g, v| g.matmul(v[0], v[1]))
    });
}

#[test]
fn add_sub_mul_with_broadcast() {
    each_seed("binary", |s, rng| {
        let (m, n) = (rng.random_range(1..5), rng.random_range(1..5));
        let a = rand_tensor(rng, &[m, n], 0.1, 1.0);
        let b = rand_tensor(rng, &[m, n], 0.1, 1.0);
        let c = rand_tensor(rng, &[n], 0.1, 1.0);
        let e1 = check("add", s, vec![a.clone(), b.clone()], |g, v| {
            g.add(v[0], v[1])
        });
        let e2 = check("add-bcast", s, vec![a.clone(), c.clone()], |g, v| {
            g.add(v[0], v[1])
        });
        let e3 = check("sub", s, vec![a.clone(), c.clone()], |g, v| {
            g.sub(v[0], v[1])
        });
        let e4 = check("mul", s, vec![a.clone(), b], |g, v| g.mul(v[0], v[1]));
        let e5 = check("mul-bcast", s, vec![a.clone(), c], |g, v| g.mul(v[0], v[1]));
        let e6 = check("mul-self", s, vec![a.clone()], |g, v| g.mul(v[0], v[0]));
        let e7 = check("scale", s, vec![a], |g, v| g.scale(v[0], -2.5));
        [e1, e2, e3, e4, e5, e6, e7].into_iter().fold(0.0, f64::max)
    });
}

#[test]
fn shape_ops() {
    each_seed("shape", |s, rng| {
        let a = rand_tensor(rng, &[3, 4], 0.1, 1.0);
        let b = rand_tensor(rng, &[3, 2], 0.1, 1.0);
        let c3 = rand_tensor(rng, &[2, 3, 4], 0.1, 1.0);
        let e1 = check("transpose", s, vec![a.clone()], |g, v| g.transpose(v[0]));
        let e2 = check("reshape", s, vec![a.clone()], |g, v| {
            g.reshape(v[0], &[2, 6])
        });
        let e3 = check("slice", s, vec![a.clone()], |g, v| g.slice(v[0], 1, 1, 2));
        let e4 = check("slice-rows", s, vec![a.clone()], |g, v| {
            g.slice(v[0], 0, 1, 2)
        });
        let e5 = check("concat", s, vec![a.clone(), b], |g, v| {
            g.concat(&[v[0], v[1], v[0]], 1)
        });
        let e6 = check("concat-rows", s, vec![a], |g, v| g.concat(&[v[0], v[0]], 0));
        let e7 = check("permute", s, vec![c3], |g, v| g.permute(v[0], &[1, 0, 2]));
        [e1, e2, e3, e4, e5, e6, e7].into_iter().fold(0.0, f64::max)
    });
}

#[test]
fn softmax_both_axes() {
    each_seed("softmax", |s, rng| {
        let a = rand_tensor(rng, &[3, 5], 0.1, 2.0);
        let e0 = check("softmax0", s, vec![a.clone()], |g, v| g.softmax(v[0], 0));
        let e1 = check("softmax1", s, vec![a], |g, v| g.softmax(v[0], 1));
        e0.max(e1)
    });
}

#[test]
fn elementwise_nonlinearities() {
    each_seed("unary", |s, rng| {
        let a = rand_tensor(rng, &[4, 3], 0.1, 2.0);
        let p = positive(rng, &[4, 3]);
        let errs = [
            check("log", s, vec![p], |g, v| g.log(v[0])),
            check("exp", s, vec![a.clone()], |g, v| g.exp(v[0])),
            check("relu", s, vec![a.clone()], |g, v| g.relu(v[0])),
            check("gelu", s, vec![a.clone()], |g, v| g.gelu(v[0])),
            check("swish", s, vec![a.clone()], |g, v| g.swish(v[0])),
            check("tanh", s, vec![a.clone()], |g, v| g.tanh(v[0])),
            check("sigmoid", s, vec![a], |g, v| g.sigmoid(v[0])),
        ];
        errs.into_iter().fold(0.0, f64::max)
    });
}

#[test]
fn layer_norm_both_axes() {
    each_seed("layer_norm", |s, rng| {
        let x = rand_tensor(rng, &[3, 6], 0.1, 2.0);
        let g6 = rand_tensor(rng, &[6], 0.5, 1.5);
        let b6 = rand_tensor(rng, &[6], 0.1, 1.0);
        let g3 = rand_tensor(rng, &[3], 0.5, 1.5);
        let b3 = rand_tensor(rng, &[3], 0.1, 1.0);
        let e1 = check("layer_norm1", s, vec![x.clone(), g6, b6], |g, v| {
            g.layer_norm(v[0], v[1], v[2], 1)
        });
        let e0 = check("layer_norm0", s, vec![x, g3, b3], |g, v| {
            g.layer_norm(v[0], v[1], v[2], 0)
        });
        e0.max(e1)
    });
}

#[test]
fn dropout_with_fixed_mask() {
    each_seed("dropout", |s, rng| {
        let x = rand_tensor(rng, &[5, 4], 0.1, 1.0);
        check("dropout", s, vec![x], |g, v| g.dropout(v[0], 0.3, 99))
    });
}

#[test]
fn embedding_lookup() {
    each_seed("embedding", |s, rng| {
        let table = rand_tensor(rng, &[5, 3], 0.1, 1.0);
        let ids: Vec<usize> = (0..6).map(|_| rng.random_range(0..5)).collect();
        check("embedding", s, vec![table], |g, v| g.embedding(v[0], &ids))
    });
}

#[test]
fn conv2d_strided() {
    each_seed("conv2d", |s, rng| {
        let h = rng.random_range(3..8);
        let x = rand_tensor(rng, &[2, h, 6], 0.1, 1.0);
        let w = rand_tensor(rng, &[3, 2, 3, 3], 0.1, 1.0);
        let b = rand_tensor(rng, &[3], 0.1, 1.0);
        let e1 = check(
            "conv2d-s22",
            s,
            vec![x.clone(), w.clone(), b.clone()],
            |g, v| g.conv2d(v[0], v[1], v[2], (2, 2)),
        );
        let e2 = check("conv2d-s12", s, vec![x, w, b], |g, v| {
            g.conv2d(v[0], v[1], v[2], (1, 2))
        });
        e1.max(e2)
    });
}

#[test]
fn depthwise_conv1d() {
    each_seed("depthwise", |s, rng| {
        let t = rng.random_range(2..9);
        let x = rand_tensor(rng, &[t, 3], 0.1, 1.0);
        let w = rand_tensor(rng, &[3, 5], 0.1, 1.0);
        check("depthwise_conv1d", s, vec![x, w], |g, v| {
            g.depthwise_conv1d(v[0], v[1])
        })
    });
}

#[test]
fn cross_entropy_masked() {
    each_seed("cross_entropy", |s, rng| {
        let logits = rand_tensor(rng, &[6, 4], 0.1, 2.0);
        let targets: Vec<usize> = (0..6).map(|_| rng.random_range(0..4)).collect();
        let mut mask: Vec<bool> = (0..6).map(|_| rng.random::<bool>()).collect();
        mask[0] = true;
        let e1 = check("ce-masked", s, vec![logits.clone()], |g, v| {
            g.cross_entropy(v[0], &targets, Some(&mask))
        });
        let e2 = check("ce", s, vec![logits], |g, v| {
            g.cross_entropy(v[0], &targets, None)
        });
        e1.max(e2)
    });
}

#[test]
fn cosine_similarity_matrix() {
    each_seed("cosine", |s, rng| {
        let a = rand_tensor(rng, &[3, 4], 0.1, 1.0);
        let b = rand_tensor(rng, &[5, 4], 0.1, 1.0);
        check("cosine", s, vec![a, b], |g, v| {
            g.cosine_similarity(v[0], v[1])
        })
    });
}

#[test]
fn reductions_and_row_replacement() {
    each_seed("reduce", |s, rng| {
        let a = rand_tensor(rng, &[4, 3], 0.1, 1.0);
        let v = rand_tensor(rng, &[3], 0.1, 1.0);
        let rows = [true, false, true, false];
        let e1 = check("sum", s, vec![a.clone()], |g, x| g.sum(x[0]));
        let e2 = check("mean", s, vec![a.clone()], |g, x| g.mean(x[0]));
        let e3 = check("replace_rows", s, vec![a, v], |g, x| {
            g.replace_rows(x[0], x[1], &rows)
        });
        e1.max(e2).max(e3)
    });
}

#[test]
fn composite_two_layer_network() {
    each_seed("mlp", |s, rng| {
        let x = rand_tensor(rng, &[5, 4], 0.1, 1.0);
        let w1 = rand_tensor(rng, &[4, 6], 0.1, 1.0);
        let b1 = rand_tensor(rng, &[6], 0.1, 1.0);
        let w2 = rand_tensor(rng, &[6, 3], 0.1, 1.0);
        let targets = [0usize, 2, 1, 1, 0];
        check("mlp", s, vec![x, w1, b1, w2], |g, v| {
            let h = g.matmul(v[0], v[1])?;
            let h = g.add(h, v[2])?;
            let h = g.tanh(h)?;
            let o = g.matmul(h, v[3])?;
            let l = g.cross_entropy(o, &targets, None)?;
            g.reshape(l, &[1])
        })
    });
}
