use crate::error::{Error, Result};
use crate::graph::Gradients;
use crate::params::{ParamId, ParamStore};
use crate::real::Real;

/// Per-parameter gradient accumulator that outlives individual graphs.
#[derive(Clone, Debug)]
pub struct GradBuffer<R = f32> {
    grads: Vec<Vec<R>>,
}

impl<R: Real> GradBuffer<R> {
    pub fn new(store: &ParamStore<R>) -> Self {
        Self {
            grads: store
                .entries()
                .map(|(_, e)| vec![R::zero(); e.value.numel()])
                .collect(),
        }
    }

    /// Adds `weight * grads` into the buffer.
    pub fn accumulate(&mut self, grads: &Gradients<R>, weight: f64) {
        let w = R::of(weight);
        for (id, g) in grads.params() {
            self.grads[id.0]
                .iter_mut()
                .zip(g)
                .for_each(|(d, &s)| *d += w * s);
        }
    }

    pub fn get(&self, id: ParamId) -> &[R] {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [R] {
        &mut self.grads[id.0]
    }

    pub fn clear(&mut self) {
        self.grads
            .iter_mut()
            .for_each(|g| g.iter_mut().for_each(|v| *v = R::zero()));
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.iter())
            .map(|v| v.as_f64().powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global-norm clip applied after group scaling; `None` disables it.
    pub max_grad_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            weight_decay: 0.0,
            max_grad_norm: Some(5.0),
        }
    }
}

/// First/second moment buffers and the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<R = f32> {
    pub m: Vec<Vec<R>>,
    pub v: Vec<Vec<R>>,
    pub step: u64,
}

impl<R: Real> AdamState<R> {
    pub fn new(store: &ParamStore<R>) -> Self {
        let zeros: Vec<Vec<R>> = store
            .entries()
            .map(|(_, e)| vec![R::zero(); e.value.numel()])
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config }
    }

    /// Applies one bias-corrected Adam update and clears `grads`.
    ///
    /// Each group's `grad_scale` multiplies its gradients first; frozen groups
    /// are skipped entirely (parameters and moments untouched). Returns the
    /// gradient norm seen by the clip, before clipping.
    pub fn step<R: Real>(
        &self,
        store: &mut ParamStore<R>,
        grads: &mut GradBuffer<R>,
        state: &mut AdamState<R>,
        lr: f64,
    ) -> Result<f64> {
        if state.m.len() != store.len() || grads.grads.len() != store.len() {
            return Err(Error::State(
                "optimizer state does not match parameter store".into(),
            ));
        }
        let ids: Vec<(ParamId, bool, f64)> = store
            .entries()
            .map(|(id, e)| {
                let g = store.group_info(e.group);
                (id, g.frozen, g.grad_scale)
            })
            .collect();
        for &(id, frozen, scale) in &ids {
            let g = grads.get_mut(id);
            if frozen {
                g.iter_mut().for_each(|v| *v = R::zero());
            } else if scale != 1.0 {
                let s = R::of(scale);
                g.iter_mut().for_each(|v| *v *= s);
            }
        }
        let norm = grads.global_norm();
        if !norm.is_finite() {
            return Err(Error::NonFinite { op: "adam_step" });
        }
        let clip = match self.config.max_grad_norm {
            Some(max) if norm > max => max / norm,
            _ => 1.0,
        };
        state.step += 1;
        let t = state.step as i32;
        let (b1, b2) = (self.config.beta1, self.config.beta2);
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        for &(id, frozen, _) in &ids {
            if frozen {
                continue;
            }
            let g = &grads.grads[id.0];
            let m = &mut state.m[id.0];
            let v = &mut state.v[id.0];
            let p = store.value_mut(id).data_mut();
            for i in 0..p.len() {
                let gi = g[i].as_f64() * clip;
                let mi = b1 * m[i].as_f64() + (1.0 - b1) * gi;
                let vi = b2 * v[i].as_f64() + (1.0 - b2) * gi * gi;
                m[i] = R::of(mi);
                v[i] = R::of(vi);
                let pi = p[i].as_f64();
                let update = (mi / bc1) / ((vi / bc2).sqrt() + self.config.eps)
                    + self.config.weight_decay * pi;
                p[i] = R::of(pi - lr * update);
            }
        }
        grads.clear();
        Ok(norm)
    }
}
