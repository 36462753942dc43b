use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::{lanes, Tensor};

const LAYER_NORM_EPS: f64 = 1e-5;
const COSINE_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    /// rhs is a vector broadcast along the last axis of lhs
    Last,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unary {
    Log,
    Exp,
    Relu,
    Gelu,
    Swish,
    Tanh,
    Sigmoid,
}

enum Op<R> {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var, Bcast),
    Sub(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    Scale(Var, R),
    Transpose(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    Unary(Var, Unary),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        axis: usize,
        xhat: Vec<R>,
        rstd: Vec<R>,
    },
    Dropout {
        x: Var,
        mask: Vec<R>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        cols: Vec<R>,
        geom: ConvGeom,
    },
    DepthwiseConv1d {
        x: Var,
        w: Var,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        mask: Vec<bool>,
        probs: Vec<R>,
        count: usize,
    },
    Cosine {
        a: Var,
        b: Var,
        a_unit: Vec<R>,
        b_unit: Vec<R>,
        a_norm: Vec<(R, bool)>,
        b_norm: Vec<(R, bool)>,
    },
    Sum(Var),
    Mean(Var),
    ReplaceRows {
        x: Var,
        v: Var,
        rows: Vec<bool>,
    },
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn im2col<R: Real>(&self, x: &[R]) -> Vec<R> {
        let p = self.ho * self.wo;
        let mut cols = vec![R::zero(); self.c_in * self.kh * self.kw * p];
        for c in 0..self.c_in {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oi in 0..self.ho {
                        let ii = (oi * self.sh + ki) as isize - self.ph as isize;
                        if ii < 0 || ii >= self.h as isize {
                            continue;
                        }
                        let src = &x[(c * self.h + ii as usize) * self.w..];
                        for oj in 0..self.wo {
                            let jj = (oj * self.sw + kj) as isize - self.pw as isize;
                            if jj >= 0 && jj < self.w as isize {
                                dst[oi * self.wo + oj] = src[jj as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im<R: Real>(&self, cols: &[R], gx: &mut [R]) {
        let p = self.ho * self.wo;
        for c in 0..self.c_in {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * p..(row + 1) * p];
                    for oi in 0..self.ho {
                        let ii = (oi * self.sh + ki) as isize - self.ph as isize;
                        if ii < 0 || ii >= self.h as isize {
                            continue;
                        }
                        let base = (c * self.h + ii as usize) * self.w;
                        for oj in 0..self.wo {
                            let jj = (oj * self.sw + kj) as isize - self.pw as isize;
                            if jj >= 0 && jj < self.w as isize {
                                gx[base + jj as usize] += src[oi * self.wo + oj];
                            }
                        }
                    }
                }
            }
        }
    }
}

struct Node<R> {
    value: Tensor<R>,
    op: Op<R>,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<R = f32> {
    nodes: Vec<Option<Vec<R>>>,
    params: Vec<(ParamId, Var)>,
}

impl<R: Real> Gradients<R> {
    /// Gradient with respect to a leaf created by [`Graph::variable`] or
    /// [`Graph::param`]. `None` when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&[R]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }

    /// Parameter gradients; parameters the loss does not reach are omitted.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[R])> + '_ {
        self.params
            .iter()
            .filter_map(|(id, v)| self.nodes[v.0].as_deref().map(|g| (*id, g)))
    }

    pub fn param(&self, id: ParamId) -> Option<&[R]> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|(_, v)| self.nodes[v.0].as_deref())
    }
}

/// A tape of operations over tensors.
pub struct Graph<'p, R: Real = f32> {
    params: &'p ParamStore<R>,
    param_vars: Vec<Option<Var>>,
    nodes: Vec<Node<R>>,
    mode: Mode,
    backward_done: bool,
}

impl<'p, R: Real> Graph<'p, R> {
    pub fn new(params: &'p ParamStore<R>, mode: Mode) -> Self {
        Self {
            params,
            param_vars: vec![None; params.len()],
            nodes: Vec::new(),
            mode,
            backward_done: false,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_train(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn store(&self) -> &'p ParamStore<R> {
        self.params
    }

    /// Clears the tape so the graph can be reused for another forward pass.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.param_vars.iter_mut().for_each(|v| *v = None);
        self.backward_done = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<R> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(
        &mut self,
        op_name: &'static str,
        value: Tensor<R>,
        op: Op<R>,
        needs_grad: bool,
    ) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// The graph node for a stored parameter (created once per tape).
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let value = self.params.value(id).clone();
        self.nodes.push(Node {
            value,
            op: Op::Param,
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    /// Input that takes no gradient.
    pub fn constant(&mut self, value: Tensor<R>) -> Result<Var> {
        self.push("constant", value, Op::Leaf, false)
    }

    /// Input whose gradient is reported by [`Gradients::wrt`].
    pub fn variable(&mut self, value: Tensor<R>) -> Result<Var> {
        self.push("variable", value, Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![R::zero(); m * n];
        R::gemm(
            false,
            false,
            m,
            k,
            n,
            R::one(),
            self.value(a).data(),
            self.value(b).data(),
            R::zero(),
            &mut out,
        );
        let ng = self.ng(a) || self.ng(b);
        self.push("matmul", Tensor::new(&[m, n], out)?, Op::MatMul(a, b), ng)
    }

    fn bcast(&self, op: &'static str, a: Var, b: Var) -> Result<Bcast> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            Ok(Bcast::Same)
        } else if sb.len() == 1 && !sa.is_empty() && sa[sa.len() - 1] == sb[0] {
            Ok(Bcast::Last)
        } else {
            Err(Error::shape(op, sa, sb))
        }
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(R, R) -> R,
    ) -> Result<(Tensor<R>, Bcast)> {
        let mode = self.bcast(name, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let n = tb.numel();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, tb.data()[if mode == Bcast::Same { i } else { i % n }]))
            .collect();
        Ok((Tensor::new(ta.shape(), data)?, mode))
    }

    /// Elementwise sum; `b` may also be a vector matching the last axis of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, m) = self.binary("add", a, b, |x, y| x + y)?;
        let ng = self.ng(a) || self.ng(b);
        self.push("add", t, Op::Add(a, b, m), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, m) = self.binary("sub", a, b, |x, y| x - y)?;
        let ng = self.ng(a) || self.ng(b);
        self.push("sub", t, Op::Sub(a, b, m), ng)
    }

    /// Elementwise product with the same broadcasting rule as [`Graph::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, m) = self.binary("mul", a, b, |x, y| x * y)?;
        let ng = self.ng(a) || self.ng(b);
        self.push("mul", t, Op::Mul(a, b, m), ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let c = R::of(c);
        let ta = self.value(a);
        let t = Tensor::new(ta.shape(), ta.data().iter().map(|&x| x * c).collect())?;
        let ng = self.ng(a);
        self.push("scale", t, Op::Scale(a, c), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        ta.require_rank("transpose", 2)?;
        let (m, n) = (ta.shape()[0], ta.shape()[1]);
        let src = ta.data();
        let mut out = vec![R::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let ng = self.ng(a);
        self.push(
            "transpose",
            Tensor::new(&[n, m], out)?,
            Op::Transpose(a),
            ng,
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        let ng = self.ng(a);
        self.push("reshape", t, Op::Reshape(a), ng)
    }

    /// Reorders axes: output axis `d` is input axis `axes[d]`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        let rank = ta.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank
            || axes
                .iter()
                .any(|&ax| ax >= rank || std::mem::replace(&mut seen[ax], true))
        {
            return Err(Error::shape("permute", ta.shape(), axes));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&ax| ta.shape()[ax]).collect();
        let src = ta.data();
        let mut out = vec![R::zero(); src.len()];
        for_each_permuted(ta.shape(), axes, |o, i| out[o] = src[i]);
        let ng = self.ng(a);
        self.push(
            "permute",
            Tensor::new(&out_shape, out)?,
            Op::Permute(a, axes.to_vec()),
            ng,
        )
    }

    /// Takes `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        if axis >= ta.rank() || start + len > ta.shape()[axis] {
            return Err(Error::arg(
                "slice",
                format!(
                    "range {start}..{} on axis {axis} of {:?}",
                    start + len,
                    ta.shape()
                ),
            ));
        }
        let (outer, full, inner) = lanes(ta.shape(), axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * full * inner + start * inner;
            out.extend_from_slice(&ta.data()[base..base + len * inner]);
        }
        let mut shape = ta.shape().to_vec();
        shape[axis] = len;
        let ng = self.ng(a);
        self.push(
            "slice",
            Tensor::new(&shape, out)?,
            Op::Slice { x: a, axis, start },
            ng,
        )
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::arg("concat", "no inputs"))?;
        let base_shape = self.shape(*first).to_vec();
        if axis >= base_shape.len() {
            return Err(Error::arg(
                "concat",
                format!("axis {axis} for {base_shape:?}"),
            ));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let ok = s.len() == base_shape.len()
                && s.iter()
                    .zip(&base_shape)
                    .enumerate()
                    .all(|(d, (p, q))| d == axis || p == q);
            if !ok {
                return Err(Error::shape("concat", &base_shape, s));
            }
            total += s[axis];
        }
        let mut shape = base_shape.clone();
        shape[axis] = total;
        let (outer, _, inner) = lanes(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &x in xs {
                let t = self.value(x);
                let len = t.shape()[axis];
                out.extend_from_slice(&t.data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let ng = xs.iter().any(|&x| self.ng(x));
        self.push(
            "concat",
            Tensor::new(&shape, out)?,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            ng,
        )
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ta = self.value(a);
        if axis >= ta.rank() {
            return Err(Error::arg(
                "softmax",
                format!("axis {axis} for {:?}", ta.shape()),
            ));
        }
        let (outer, len, inner) = lanes(ta.shape(), axis);
        let src = ta.data();
        let mut out = vec![R::zero(); src.len()];
        for o in 0..outer {
            for j in 0..inner {
                let idx = |i: usize| o * len * inner + i * inner + j;
                let max = (0..len)
                    .map(|i| src[idx(i)])
                    .fold(R::neg_infinity(), R::max);
                let mut total = R::zero();
                for i in 0..len {
                    let e = (src[idx(i)] - max).exp();
                    out[idx(i)] = e;
                    total += e;
                }
                for i in 0..len {
                    out[idx(i)] /= total;
                }
            }
        }
        let shape = ta.shape().to_vec();
        let ng = self.ng(a);
        self.push(
            "softmax",
            Tensor::new(&shape, out)?,
            Op::Softmax { x: a, axis },
            ng,
        )
    }

    fn unary(&mut self, name: &'static str, a: Var, kind: Unary) -> Result<Var> {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| unary_forward(kind, x)).collect();
        let t = Tensor::new(ta.shape(), data)?;
        let ng = self.ng(a);
        self.push(name, t, Op::Unary(a, kind), ng)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary("log", a, Unary::Log)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, Unary::Exp)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, Unary::Relu)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.unary("gelu", a, Unary::Gelu)
    }

    pub fn swish(&mut self, a: Var) -> Result<Var> {
        self.unary("swish", a, Unary::Swish)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, Unary::Tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, Unary::Sigmoid)
    }

    /// Normalizes along `axis` and applies a per-entry gain and bias of
    /// length `shape[axis]`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, axis: usize) -> Result<Var> {
        let tx = self.value(x);
        if axis >= tx.rank() {
            return Err(Error::arg(
                "layer_norm",
                format!("axis {axis} for {:?}", tx.shape()),
            ));
        }
        let (outer, len, inner) = lanes(tx.shape(), axis);
        for p in [gamma, beta] {
            if self.shape(p) != [len] {
                return Err(Error::shape("layer_norm", &[len], self.shape(p)));
            }
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let src = tx.data();
        let mut out = vec![R::zero(); src.len()];
        let mut xhat = vec![R::zero(); src.len()];
        let mut rstd = Vec::with_capacity(outer * inner);
        let n = R::of(len as f64);
        for o in 0..outer {
            for j in 0..inner {
                let idx = |i: usize| o * len * inner + i * inner + j;
                let mean = (0..len).map(|i| src[idx(i)]).sum::<R>() / n;
                let var = (0..len).map(|i| (src[idx(i)] - mean).powi(2)).sum::<R>() / n;
                let r = R::one() / (var + R::of(LAYER_NORM_EPS)).sqrt();
                for i in 0..len {
                    let h = (src[idx(i)] - mean) * r;
                    xhat[idx(i)] = h;
                    out[idx(i)] = h * g[i] + b[i];
                }
                rstd.push(r);
            }
        }
        let shape = tx.shape().to_vec();
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            axis,
            xhat,
            rstd,
        };
        self.push("layer_norm", Tensor::new(&shape, out)?, op, ng)
    }

    /// Inverted dropout with a mask drawn from `seed`; identity in eval mode.
    pub fn dropout(&mut self, x: Var, p: f64, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::arg("dropout", format!("p = {p} outside [0, 1)")));
        }
        if self.mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = R::of(1.0 / (1.0 - p));
        let n = self.value(x).numel();
        let mask: Vec<R> = (0..n)
            .map(|_| {
                if rng.random::<f64>() < p {
                    R::zero()
                } else {
                    keep
                }
            })
            .collect();
        let tx = self.value(x);
        let data = tx.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let t = Tensor::new(tx.shape(), data)?;
        let ng = self.ng(x);
        self.push("dropout", t, Op::Dropout { x, mask }, ng)
    }

    /// Gathers rows of a `vocab x dim` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        tt.require_rank("embedding", 2)?;
        let (vocab, dim) = (tt.shape()[0], tt.shape()[1]);
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= vocab {
                return Err(Error::arg("embedding", format!("id {id} >= vocab {vocab}")));
            }
            out.extend_from_slice(tt.row(id));
        }
        let ng = self.ng(table);
        let op = Op::Embedding {
            table,
            ids: ids.to_vec(),
        };
        self.push("embedding", Tensor::new(&[ids.len(), dim], out)?, op, ng)
    }

    /// 2-D convolution of `x: [c_in, h, w]` with `w: [c_out, c_in, kh, kw]`
    /// and bias `[c_out]`, zero padding `k / 2` on each side.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: (usize, usize)) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 3 || sw.len() != 4 || sw[1] != sx[0] {
            return Err(Error::shape("conv2d", sx, sw));
        }
        if self.shape(b) != [sw[0]] {
            return Err(Error::shape("conv2d", &[sw[0]], self.shape(b)));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::arg("conv2d", "zero stride"));
        }
        let (kh, kw) = (sw[2], sw[3]);
        let (ph, pw) = (kh / 2, kw / 2);
        let (h, wd) = (sx[1], sx[2]);
        if h + 2 * ph < kh || wd + 2 * pw < kw {
            return Err(Error::shape("conv2d", sx, sw));
        }
        let geom = ConvGeom {
            c_in: sx[0],
            h,
            w: wd,
            c_out: sw[0],
            kh,
            kw,
            sh: stride.0,
            sw: stride.1,
            ph,
            pw,
            ho: (h + 2 * ph - kh) / stride.0 + 1,
            wo: (wd + 2 * pw - kw) / stride.1 + 1,
        };
        let cols = geom.im2col(self.value(x).data());
        let p = geom.ho * geom.wo;
        let k = geom.c_in * kh * kw;
        let mut out = vec![R::zero(); geom.c_out * p];
        for (c, &bias) in self.value(b).data().iter().enumerate() {
            out[c * p..(c + 1) * p].iter_mut().for_each(|v| *v = bias);
        }
        R::gemm(
            false,
            false,
            geom.c_out,
            k,
            p,
            R::one(),
            self.value(w).data(),
            &cols,
            R::one(),
            &mut out,
        );
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        let shape = [geom.c_out, geom.ho, geom.wo];
        self.push(
            "conv2d",
            Tensor::new(&shape, out)?,
            Op::Conv2d {
                x,
                w,
                b,
                cols,
                geom,
            },
            ng,
        )
    }

    /// Per-channel convolution over time of `x: [t, c]` with `w: [c, k]`,
    /// `k` odd, zero "same" padding.
    pub fn depthwise_conv1d(&mut self, x: Var, w: Var) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[0] {
            return Err(Error::shape("depthwise_conv1d", sx, sw));
        }
        let k = sw[1];
        if k % 2 == 0 {
            return Err(Error::arg(
                "depthwise_conv1d",
                format!("kernel {k} is even"),
            ));
        }
        let (t, c) = (sx[0], sx[1]);
        let half = k / 2;
        let (xs, ws) = (self.value(x).data(), self.value(w).data());
        let mut out = vec![R::zero(); t * c];
        for ti in 0..t {
            for kk in 0..k {
                let src = ti as isize + kk as isize - half as isize;
                if src < 0 || src >= t as isize {
                    continue;
                }
                let row = &xs[src as usize * c..(src as usize + 1) * c];
                let dst = &mut out[ti * c..(ti + 1) * c];
                for ch in 0..c {
                    dst[ch] += ws[ch * k + kk] * row[ch];
                }
            }
        }
        let ng = self.ng(x) || self.ng(w);
        self.push(
            "depthwise_conv1d",
            Tensor::new(&[t, c], out)?,
            Op::DepthwiseConv1d { x, w },
            ng,
        )
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits: [n, classes]`, over rows where `mask` is true (all rows when
    /// `mask` is `None`).
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        mask: Option<&[bool]>,
    ) -> Result<Var> {
        let tl = self.value(logits);
        tl.require_rank("cross_entropy", 2)?;
        let (n, classes) = (tl.shape()[0], tl.shape()[1]);
        if targets.len() != n {
            return Err(Error::shape("cross_entropy", tl.shape(), &[targets.len()]));
        }
        let mask = match mask {
            Some(m) if m.len() != n => return Err(Error::shape("cross_entropy", &[n], &[m.len()])),
            Some(m) => m.to_vec(),
            None => vec![true; n],
        };
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::arg("cross_entropy", "mask selects no rows"));
        }
        let mut probs = vec![R::zero(); n * classes];
        let mut total = 0.0f64;
        for r in 0..n {
            let row = tl.row(r);
            let max = row.iter().copied().fold(R::neg_infinity(), R::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<R>().ln() + max;
            for (p, &v) in probs[r * classes..(r + 1) * classes].iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
            if mask[r] {
                let t = targets[r];
                if t >= classes {
                    return Err(Error::arg(
                        "cross_entropy",
                        format!("target {t} >= {classes} classes"),
                    ));
                }
                total -= (row[t] - lse).as_f64();
            }
        }
        let loss = R::of(total / count as f64);
        let ng = self.ng(logits);
        let op = Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
            mask,
            probs,
            count,
        };
        self.push("cross_entropy", Tensor::scalar(loss), op, ng)
    }

    /// Pairwise cosine similarity between rows of `a: [n, d]` and
    /// `b: [m, d]`, giving `[n, m]`. Norms are floored at 1e-8.
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::shape("cosine_similarity", sa, sb));
        }
        let (n, m, d) = (sa[0], sb[0], sa[1]);
        let (a_unit, a_norm) = unit_rows(self.value(a).data(), d);
        let (b_unit, b_norm) = unit_rows(self.value(b).data(), d);
        let mut out = vec![R::zero(); n * m];
        R::gemm(
            false,
            true,
            n,
            d,
            m,
            R::one(),
            &a_unit,
            &b_unit,
            R::zero(),
            &mut out,
        );
        let ng = self.ng(a) || self.ng(b);
        let op = Op::Cosine {
            a,
            b,
            a_unit,
            b_unit,
            a_norm,
            b_norm,
        };
        self.push("cosine_similarity", Tensor::new(&[n, m], out)?, op, ng)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().copied().sum();
        let ng = self.ng(a);
        self.push("sum", Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s = t.data().iter().copied().sum::<R>() / R::of(t.numel() as f64);
        let ng = self.ng(a);
        self.push("mean", Tensor::scalar(s), Op::Mean(a), ng)
    }

    /// Replaces the rows of `x: [t, d]` selected by `rows` with the vector `v: [d]`.
    pub fn replace_rows(&mut self, x: Var, v: Var, rows: &[bool]) -> Result<Var> {
        let (sx, sv) = (self.shape(x), self.shape(v));
        if sx.len() != 2 || sv != [sx[1]] || rows.len() != sx[0] {
            return Err(Error::shape("replace_rows", sx, sv));
        }
        let mut t = self.value(x).clone();
        let vv = self.value(v).data().to_vec();
        for (r, &m) in rows.iter().enumerate() {
            if m {
                t.row_mut(r).copy_from_slice(&vv);
            }
        }
        let ng = self.ng(x) || self.ng(v);
        let op = Op::ReplaceRows {
            x,
            v,
            rows: rows.to_vec(),
        };
        self.push("replace_rows", t, op, ng)
    }

    /// Propagates d`loss`/d(node) back through the tape. `loss` must be a
    /// single-element tensor. May be called once per forward pass; call
    /// [`Graph::reset`] before reusing the graph.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<R>> {
        if self.backward_done {
            return Err(Error::State("backward called twice without reset".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::arg(
                "backward",
                format!("loss has shape {:?}", self.shape(loss)),
            ));
        }
        self.backward_done = true;
        let nodes = &self.nodes;
        let mut grads: Vec<Option<Vec<R>>> = vec![None; nodes.len()];
        if nodes[loss.0].needs_grad {
            grads[loss.0] = Some(vec![R::one()]);
        }
        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            match node.op {
                Op::Leaf | Op::Param => continue,
                _ => {}
            }
            let Some(g) = grads[i].take() else { continue };
            backward_node(nodes, &mut grads, node, &g);
        }
        let params = self
            .param_vars
            .iter()
            .enumerate()
            .filter_map(|(p, v)| v.map(|v| (ParamId(p), v)))
            .collect();
        Ok(Gradients {
            nodes: grads,
            params,
        })
    }
}

fn unit_rows<R: Real>(x: &[R], d: usize) -> (Vec<R>, Vec<(R, bool)>) {
    let mut unit = x.to_vec();
    let mut norms = Vec::with_capacity(x.len() / d.max(1));
    let eps = R::of(COSINE_EPS);
    for row in unit.chunks_mut(d.max(1)) {
        let raw = row.iter().map(|&v| v * v).sum::<R>().sqrt();
        let floored = raw < eps;
        let norm = if floored { eps } else { raw };
        row.iter_mut().for_each(|v| *v /= norm);
        norms.push((norm, floored));
    }
    (unit, norms)
}

/// Calls `f(out_index, in_index)` for every element of a permutation.
fn for_each_permuted(shape: &[usize], axes: &[usize], mut f: impl FnMut(usize, usize)) {
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * shape[d + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let total: usize = shape.iter().product();
    let mut idx = vec![0usize; rank];
    for o in 0..total {
        let i: usize = idx.iter().zip(&strides).map(|(a, b)| a * b).sum();
        f(o, i);
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

fn sigmoid<R: Real>(x: R) -> R {
    R::one() / (R::one() + (-x).exp())
}

fn unary_forward<R: Real>(kind: Unary, x: R) -> R {
    match kind {
        Unary::Log => x.ln(),
        Unary::Exp => x.exp(),
        Unary::Relu => x.max(R::zero()),
        Unary::Gelu => {
            let u = R::of(GELU_C) * (x + R::of(GELU_A) * x * x * x);
            R::of(0.5) * x * (R::one() + u.tanh())
        }
        Unary::Swish => x * sigmoid(x),
        Unary::Tanh => x.tanh(),
        Unary::Sigmoid => sigmoid(x),
    }
}

fn unary_derivative<R: Real>(kind: Unary, x: R, y: R) -> R {
    match kind {
        Unary::Log => R::one() / x,
        Unary::Exp => y,
        Unary::Relu => {
            if x > R::zero() {
                R::one()
            } else {
                R::zero()
            }
        }
        Unary::Gelu => {
            let c = R::of(GELU_C);
            let a = R::of(GELU_A);
            let t = (c * (x + a * x * x * x)).tanh();
            let half = R::of(0.5);
            half * (R::one() + t)
                + half * x * (R::one() - t * t) * c * (R::one() + R::of(3.0) * a * x * x)
        }
        Unary::Swish => {
            let s = sigmoid(x);
            s + x * s * (R::one() - s)
        }
        Unary::Tanh => R::one() - y * y,
        Unary::Sigmoid => y * (R::one() - y),
    }
}

fn buf<'g, R: Real>(
    grads: &'g mut [Option<Vec<R>>],
    nodes: &[Node<R>],
    v: Var,
) -> Option<&'g mut Vec<R>> {
    let node = &nodes[v.0];
    if !node.needs_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![R::zero(); node.value.numel()]))
}

fn reduce_bcast<R: Real>(dst: &mut [R], src: impl Iterator<Item = R>, mode: Bcast) {
    match mode {
        Bcast::Same => dst.iter_mut().zip(src).for_each(|(d, s)| *d += s),
        Bcast::Last => {
            let n = dst.len();
            for (i, s) in src.enumerate() {
                dst[i % n] += s;
            }
        }
    }
}

fn backward_node<R: Real>(
    nodes: &[Node<R>],
    grads: &mut [Option<Vec<R>>],
    node: &Node<R>,
    g: &[R],
) {
    let val = |v: Var| nodes[v.0].value.data();
    let shp = |v: Var| nodes[v.0].value.shape();
    match &node.op {
        Op::Leaf | Op::Param => {}
        Op::MatMul(a, b) => {
            let (m, k) = (shp(*a)[0], shp(*a)[1]);
            let n = shp(*b)[1];
            if let Some(ga) = buf(grads, nodes, *a) {
                R::gemm(false, true, m, n, k, R::one(), g, val(*b), R::one(), ga);
            }
            if let Some(gb) = buf(grads, nodes, *b) {
                R::gemm(true, false, k, m, n, R::one(), val(*a), g, R::one(), gb);
            }
        }
        Op::Add(a, b, mode) => {
            if let Some(ga) = buf(grads, nodes, *a) {
                ga.iter_mut().zip(g).for_each(|(d, &s)| *d += s);
            }
            if let Some(gb) = buf(grads, nodes, *b) {
                reduce_bcast(gb, g.iter().copied(), *mode);
            }
        }
        Op::Sub(a, b, mode) => {
            if let Some(ga) = buf(grads, nodes, *a) {
                ga.iter_mut().zip(g).for_each(|(d, &s)| *d += s);
            }
            if let Some(gb) = buf(grads, nodes, *b) {
                reduce_bcast(gb, g.iter().map(|&s| -s), *mode);
            }
        }
        Op::Mul(a, b, mode) => {
            let (va, vb) = (val(*a), val(*b));
            let nb = vb.len();
            let bi = |i: usize| if *mode == Bcast::Same { i } else { i % nb };
            if let Some(ga) = buf(grads, nodes, *a) {
                for (i, d) in ga.iter_mut().enumerate() {
                    *d += g[i] * vb[bi(i)];
                }
            }
            if let Some(gb) = buf(grads, nodes, *b) {
                reduce_bcast(gb, g.iter().zip(va).map(|(&s, &x)| s * x), *mode);
            }
        }
        Op::Scale(a, c) => {
            if let Some(ga) = buf(grads, nodes, *a) {
                ga.iter_mut().zip(g).for_each(|(d, &s)| *d += s * *c);
            }
        }
        Op::Transpose(a) => {
            let (m, n) = (shp(*a)[0], shp(*a)[1]);
            if let Some(ga) = buf(grads, nodes, *a) {
                for i in 0..m {
                    for j in 0..n {
                        ga[i * n + j] += g[j * m + i];
                    }
                }
            }
        }
        Op::Reshape(a) => {
            if let Some(ga) = buf(grads, nodes, *a) {
                ga.iter_mut().zip(g).for_each(|(d, &s)| *d += s);
            }
        }
        Op::Permute(a, axes) => {
            let shape = shp(*a).to_vec();
            if let Some(ga) = buf(grads, nodes, *a) {
                for_each_permuted(&shape, axes, |o, i| ga[i] += g[o]);
            }
        }
        Op::Slice { x, axis, start } => {
            let (outer, full, inner) = lanes(shp(*x), *axis);
            let len = node.value.shape()[*axis];
            if let Some(gx) = buf(grads, nodes, *x) {
                for o in 0..outer {
                    let dst = o * full * inner + start * inner;
                    let src = o * len * inner;
                    for e in 0..len * inner {
                        gx[dst + e] += g[src + e];
                    }
                }
            }
        }
        Op::Concat { xs, axis } => {
            let (outer, total, inner) = lanes(node.value.shape(), *axis);
            let mut offset = 0;
            for &x in xs {
                let len = shp(x)[*axis];
                if let Some(gx) = buf(grads, nodes, x) {
                    for o in 0..outer {
                        let src = o * total * inner + offset * inner;
                        for e in 0..len * inner {
                            gx[o * len * inner + e] += g[src + e];
                        }
                    }
                }
                offset += len;
            }
        }
        Op::Softmax { x, axis } => {
            let y = node.value.data();
            let (outer, len, inner) = lanes(node.value.shape(), *axis);
            if let Some(gx) = buf(grads, nodes, *x) {
                for o in 0..outer {
                    for j in 0..inner {
                        let idx = |i: usize| o * len * inner + i * inner + j;
                        let dot: R = (0..len).map(|i| g[idx(i)] * y[idx(i)]).sum();
                        for i in 0..len {
                            gx[idx(i)] += y[idx(i)] * (g[idx(i)] - dot);
                        }
                    }
                }
            }
        }
        Op::Unary(a, kind) => {
            let (x, y) = (val(*a), node.value.data());
            if let Some(ga) = buf(grads, nodes, *a) {
                for i in 0..ga.len() {
                    ga[i] += g[i] * unary_derivative(*kind, x[i], y[i]);
                }
            }
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            axis,
            xhat,
            rstd,
        } => {
            let (outer, len, inner) = lanes(node.value.shape(), *axis);
            let gam = val(*gamma);
            let n = R::of(len as f64);
            if let Some(gx) = buf(grads, nodes, *x) {
                for o in 0..outer {
                    for j in 0..inner {
                        let idx = |i: usize| o * len * inner + i * inner + j;
                        let r = rstd[o * inner + j];
                        let mut mean_g = R::zero();
                        let mut mean_gx = R::zero();
                        for i in 0..len {
                            let gh = g[idx(i)] * gam[i];
                            mean_g += gh;
                            mean_gx += gh * xhat[idx(i)];
                        }
                        mean_g /= n;
                        mean_gx /= n;
                        for i in 0..len {
                            let gh = g[idx(i)] * gam[i];
                            gx[idx(i)] += r * (gh - mean_g - xhat[idx(i)] * mean_gx);
                        }
                    }
                }
            }
            if let Some(gg) = buf(grads, nodes, *gamma) {
                for (e, (&gv, &h)) in g.iter().zip(xhat).enumerate() {
                    gg[(e / inner) % len] += gv * h;
                }
            }
            if let Some(gb) = buf(grads, nodes, *beta) {
                for (e, &gv) in g.iter().enumerate() {
                    gb[(e / inner) % len] += gv;
                }
            }
        }
        Op::Dropout { x, mask } => {
            if let Some(gx) = buf(grads, nodes, *x) {
                for i in 0..gx.len() {
                    gx[i] += g[i] * mask[i];
                }
            }
        }
        Op::Embedding { table, ids } => {
            let dim = shp(*table)[1];
            if let Some(gt) = buf(grads, nodes, *table) {
                for (r, &id) in ids.iter().enumerate() {
                    for c in 0..dim {
                        gt[id * dim + c] += g[r * dim + c];
                    }
                }
            }
        }
        Op::Conv2d {
            x,
            w,
            b,
            cols,
            geom,
        } => {
            let p = geom.ho * geom.wo;
            let k = geom.c_in * geom.kh * geom.kw;
            if let Some(gw) = buf(grads, nodes, *w) {
                R::gemm(
                    false,
                    true,
                    geom.c_out,
                    p,
                    k,
                    R::one(),
                    g,
                    cols,
                    R::one(),
                    gw,
                );
            }
            if let Some(gb) = buf(grads, nodes, *b) {
                for c in 0..geom.c_out {
                    gb[c] += g[c * p..(c + 1) * p].iter().copied().sum::<R>();
                }
            }
            if nodes[x.0].needs_grad {
                let mut gcols = vec![R::zero(); k * p];
                R::gemm(
                    true,
                    false,
                    k,
                    geom.c_out,
                    p,
                    R::one(),
                    val(*w),
                    g,
                    R::zero(),
                    &mut gcols,
                );
                if let Some(gx) = buf(grads, nodes, *x) {
                    geom.col2im(&gcols, gx);
                }
            }
        }
        Op::DepthwiseConv1d { x, w } => {
            let (t, c) = (shp(*x)[0], shp(*x)[1]);
            let k = shp(*w)[1];
            let half = k / 2;
            let (xs, ws) = (val(*x), val(*w));
            let pairs = |f: &mut dyn FnMut(usize, usize, usize)| {
                for ti in 0..t {
                    for kk in 0..k {
                        let src = ti as isize + kk as isize - half as isize;
                        if src >= 0 && (src as usize) < t {
                            f(ti, src as usize, kk);
                        }
                    }
                }
            };
            if let Some(gx) = buf(grads, nodes, *x) {
                pairs(&mut |ti, src, kk| {
                    for ch in 0..c {
                        gx[src * c + ch] += ws[ch * k + kk] * g[ti * c + ch];
                    }
                });
            }
            if let Some(gw) = buf(grads, nodes, *w) {
                pairs(&mut |ti, src, kk| {
                    for ch in 0..c {
                        gw[ch * k + kk] += xs[src * c + ch] * g[ti * c + ch];
                    }
                });
            }
        }
        Op::CrossEntropy {
            logits,
            targets,
            mask,
            probs,
            count,
        } => {
            let classes = shp(*logits)[1];
            let scale = g[0] / R::of(*count as f64);
            if let Some(gl) = buf(grads, nodes, *logits) {
                for (r, &m) in mask.iter().enumerate() {
                    if !m {
                        continue;
                    }
                    for c in 0..classes {
                        let onehot = if c == targets[r] { R::one() } else { R::zero() };
                        gl[r * classes + c] += scale * (probs[r * classes + c] - onehot);
                    }
                }
            }
        }
        Op::Cosine {
            a,
            b,
            a_unit,
            b_unit,
            a_norm,
            b_norm,
        } => {
            let (n, m) = (node.value.shape()[0], node.value.shape()[1]);
            let d = shp(*a)[1];
            let y = node.value.data();
            if nodes[a.0].needs_grad {
                let mut t = vec![R::zero(); n * d];
                R::gemm(
                    false,
                    false,
                    n,
                    m,
                    d,
                    R::one(),
                    g,
                    b_unit,
                    R::zero(),
                    &mut t,
                );
                let ga = buf(grads, nodes, *a).expect("needs grad");
                for i in 0..n {
                    let (norm, floored) = a_norm[i];
                    let s: R = if floored {
                        R::zero()
                    } else {
                        (0..m).map(|j| g[i * m + j] * y[i * m + j]).sum()
                    };
                    for e in 0..d {
                        ga[i * d + e] += (t[i * d + e] - s * a_unit[i * d + e]) / norm;
                    }
                }
            }
            if nodes[b.0].needs_grad {
                let mut t = vec![R::zero(); m * d];
                R::gemm(true, false, m, n, d, R::one(), g, a_unit, R::zero(), &mut t);
                let gb = buf(grads, nodes, *b).expect("needs grad");
                for j in 0..m {
                    let (norm, floored) = b_norm[j];
                    let s: R = if floored {
                        R::zero()
                    } else {
                        (0..n).map(|i| g[i * m + j] * y[i * m + j]).sum()
                    };
                    for e in 0..d {
                        gb[j * d + e] += (t[j * d + e] - s * b_unit[j * d + e]) / norm;
                    }
                }
            }
        }
        Op::Sum(a) => {
            if let Some(ga) = buf(grads, nodes, *a) {
                ga.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        Op::Mean(a) => {
            if let Some(ga) = buf(grads, nodes, *a) {
                let s = g[0] / R::of(ga.len() as f64);
                ga.iter_mut().for_each(|d| *d += s);
            }
        }
        Op::ReplaceRows { x, v, rows } => {
            let d = shp(*v)[0];
            if let Some(gx) = buf(grads, nodes, *x) {
                for (r, &m) in rows.iter().enumerate() {
                    if !m {
                        for e in 0..d {
                            gx[r * d + e] += g[r * d + e];
                        }
                    }
                }
            }
            if let Some(gv) = buf(grads, nodes, *v) {
                for (r, &m) in rows.iter().enumerate() {
                    if m {
                        for e in 0..d {
                            gv[e] += g[r * d + e];
                        }
                    }
                }
            }
        }
    }
}

/// Draws a uniform value in `[0, 1)` from a seed; used for seeded decisions
/// such as layer skipping that do not need a whole mask.
pub fn seeded_uniform(seed: u64) -> f64 {
    ChaCha8Rng::seed_from_u64(seed).random::<f64>()
}
