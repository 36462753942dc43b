use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use seau_autodiff::{mix_seed, Graph, GroupId, ParamId, ParamStore, Real, Tensor, Var};

use crate::error::Result;

/// Seeded parameter initializer.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform(&mut self, shape: &[usize], bound: f64) -> Tensor<f32> {
        Tensor::from_fn(shape, |_| self.rng.random_range(-bound..bound) as f32)
    }

    pub fn normal(&mut self, shape: &[usize], std: f64) -> Tensor<f32> {
        Tensor::from_fn(shape, |_| {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            (z * std) as f32
        })
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        group: GroupId,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        init: &mut Init,
    ) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let w = store.add(
            &format!("{name}.w"),
            init.uniform(&[in_dim, out_dim], bound),
            group,
        )?;
        let b = store.add(&format!("{name}.b"), Tensor::zeros(&[out_dim]), group)?;
        Ok(Self {
            w,
            b,
            in_dim,
            out_dim,
        })
    }

    pub fn forward<R: Real>(&self, g: &mut Graph<'_, R>, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let y = g.matmul(x, w)?;
        Ok(g.add(y, b)?)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, group: GroupId, name: &str, dim: usize) -> Result<Self> {
        let gamma = store.add(&format!("{name}.gamma"), Tensor::full(&[dim], 1.0), group)?;
        let beta = store.add(&format!("{name}.beta"), Tensor::zeros(&[dim]), group)?;
        Ok(Self { gamma, beta })
    }

    pub fn forward<R: Real>(&self, g: &mut Graph<'_, R>, x: Var) -> Result<Var> {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        let axis = g.shape(x).len() - 1;
        Ok(g.layer_norm(x, gamma, beta, axis)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Swish,
}

/// Pre-norm position-wise feed-forward: LN, linear, activation, dropout,
/// linear, dropout.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub norm: LayerNorm,
    pub up: Linear,
    pub down: Linear,
    pub activation: Activation,
    pub dropout: f64,
}

impl FeedForward {
    pub fn new(
        store: &mut ParamStore,
        group: GroupId,
        name: &str,
        dim: usize,
        hidden: usize,
        activation: Activation,
        dropout: f64,
        init: &mut Init,
    ) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::new(store, group, &format!("{name}.norm"), dim)?,
            up: Linear::new(store, group, &format!("{name}.up"), dim, hidden, init)?,
            down: Linear::new(store, group, &format!("{name}.down"), hidden, dim, init)?,
            activation,
            dropout,
        })
    }

    pub fn forward<R: Real>(&self, g: &mut Graph<'_, R>, x: Var, seed: u64) -> Result<Var> {
        let h = self.norm.forward(g, x)?;
        let h = self.up.forward(g, h)?;
        let h = match self.activation {
            Activation::Relu => g.relu(h)?,
            Activation::Swish => g.swish(h)?,
        };
        let h = g.dropout(h, self.dropout, mix_seed(seed, 1))?;
        let h = self.down.forward(g, h)?;
        Ok(g.dropout(h, self.dropout, mix_seed(seed, 2))?)
    }
}

/// Multi-head scaled dot-product attention. Queries come from `x`, keys and
/// values from `memory` (which may have a different width).
#[derive(Clone, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub n_heads: usize,
    pub dropout: f64,
}

pub const MASKED_SCORE: f64 = -1e9;

impl Attention {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        group: GroupId,
        name: &str,
        dim: usize,
        memory_dim: usize,
        n_heads: usize,
        dropout: f64,
        init: &mut Init,
    ) -> Result<Self> {
        Ok(Self {
            q: Linear::new(store, group, &format!("{name}.q"), dim, dim, init)?,
            k: Linear::new(store, group, &format!("{name}.k"), memory_dim, dim, init)?,
            v: Linear::new(store, group, &format!("{name}.v"), memory_dim, dim, init)?,
            out: Linear::new(store, group, &format!("{name}.out"), dim, dim, init)?,
            n_heads,
            dropout,
        })
    }

    pub fn forward<R: Real>(
        &self,
        g: &mut Graph<'_, R>,
        x: Var,
        memory: Var,
        causal: bool,
        seed: u64,
    ) -> Result<Var> {
        let q = self.q.forward(g, x)?;
        let k = self.k.forward(g, memory)?;
        let v = self.v.forward(g, memory)?;
        let (tq, tk) = (g.shape(q)[0], g.shape(k)[0]);
        let dim = self.q.out_dim;
        let dh = dim / self.n_heads;
        let mask = if causal {
            let m = Tensor::from_fn(&[tq, tk], |i| {
                if i % tk > i / tk {
                    R::of(MASKED_SCORE)
                } else {
                    R::zero()
                }
            });
            Some(g.constant(m)?)
        } else {
            None
        };
        let mut heads = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let qh = g.slice(q, 1, h * dh, dh)?;
            let kh = g.slice(k, 1, h * dh, dh)?;
            let vh = g.slice(v, 1, h * dh, dh)?;
            let kt = g.transpose(kh)?;
            let s = g.matmul(qh, kt)?;
            let mut s = g.scale(s, 1.0 / (dh as f64).sqrt())?;
            if let Some(m) = mask {
                s = g.add(s, m)?;
            }
            let p = g.softmax(s, 1)?;
            heads.push(g.matmul(p, vh)?);
        }
        let cat = g.concat(&heads, 1)?;
        let y = self.out.forward(g, cat)?;
        Ok(g.dropout(y, self.dropout, seed)?)
    }
}

/// Conformer convolution module: LN, pointwise to 2d, GLU, depthwise conv,
/// LN, swish, pointwise, dropout.
#[derive(Clone, Debug)]
pub struct ConvModule {
    pub norm: LayerNorm,
    pub pointwise_in: Linear,
    pub depthwise: ParamId,
    pub depthwise_bias: ParamId,
    pub mid_norm: LayerNorm,
    pub pointwise_out: Linear,
    pub dim: usize,
    pub dropout: f64,
}

impl ConvModule {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        group: GroupId,
        name: &str,
        dim: usize,
        kernel: usize,
        dropout: f64,
        init: &mut Init,
    ) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::new(store, group, &format!("{name}.norm"), dim)?,
            pointwise_in: Linear::new(store, group, &format!("{name}.pw_in"), dim, 2 * dim, init)?,
            depthwise: store.add(
                &format!("{name}.dw.w"),
                init.uniform(&[dim, kernel], 1.0 / (kernel as f64).sqrt()),
                group,
            )?,
            depthwise_bias: store.add(&format!("{name}.dw.b"), Tensor::zeros(&[dim]), group)?,
            mid_norm: LayerNorm::new(store, group, &format!("{name}.mid_norm"), dim)?,
            pointwise_out: Linear::new(store, group, &format!("{name}.pw_out"), dim, dim, init)?,
            dim,
            dropout,
        })
    }

    pub fn forward<R: Real>(&self, g: &mut Graph<'_, R>, x: Var, seed: u64) -> Result<Var> {
        let h = self.norm.forward(g, x)?;
        let h = self.pointwise_in.forward(g, h)?;
        let a = g.slice(h, 1, 0, self.dim)?;
        let b = g.slice(h, 1, self.dim, self.dim)?;
        let gate = g.sigmoid(b)?;
        let h = g.mul(a, gate)?;
        let w = g.param(self.depthwise);
        let h = g.depthwise_conv1d(h, w)?;
        let bias = g.param(self.depthwise_bias);
        let h = g.add(h, bias)?;
        let h = self.mid_norm.forward(g, h)?;
        let h = g.swish(h)?;
        let h = self.pointwise_out.forward(g, h)?;
        Ok(g.dropout(h, self.dropout, seed)?)
    }
}

/// Sinusoidal absolute position table, `len x dim`.
pub fn positional_encoding<R: Real>(len: usize, dim: usize) -> Tensor<R> {
    Tensor::from_fn(&[len, dim], |i| {
        let (t, j) = ((i / dim) as f64, i % dim);
        let freq = 10000f64.powf(-((j - j % 2) as f64) / dim as f64);
        R::of(if j % 2 == 0 {
            (t * freq).sin()
        } else {
            (t * freq).cos()
        })
    })
}
