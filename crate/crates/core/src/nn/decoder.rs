use seau_autodiff::{mix_seed, Graph, GroupId, ParamId, ParamStore, Real, Var};

use super::config::DecoderConfig;
use super::layers::{
    positional_encoding, Activation, Attention, FeedForward, Init, LayerNorm, Linear,
};
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

/// Pre-norm transformer decoder layer: causal self-attention,
/// cross-attention over the encoder memory, ReLU feed-forward.
#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub self_norm: LayerNorm,
    pub self_attn: Attention,
    pub cross_norm: LayerNorm,
    pub cross_attn: Attention,
    pub ffn: FeedForward,
}

impl DecoderLayer {
    pub fn new(
        store: &mut ParamStore,
        group: GroupId,
        name: &str,
        cfg: &DecoderConfig,
        init: &mut Init,
    ) -> Result<Self> {
        let (d, p) = (cfg.model_dim, cfg.dropout);
        Ok(Self {
            self_norm: LayerNorm::new(store, group, &format!("{name}.self_norm"), d)?,
            self_attn: Attention::new(
                store,
                group,
                &format!("{name}.self_attn"),
                d,
                d,
                cfg.n_heads,
                p,
                init,
            )?,
            cross_norm: LayerNorm::new(store, group, &format!("{name}.cross_norm"), d)?,
            cross_attn: Attention::new(
                store,
                group,
                &format!("{name}.cross_attn"),
                d,
                cfg.memory_dim,
                cfg.n_heads,
                p,
                init,
            )?,
            ffn: FeedForward::new(
                store,
                group,
                &format!("{name}.ffn"),
                d,
                cfg.ffn_dim,
                Activation::Relu,
                p,
                init,
            )?,
        })
    }

    pub fn forward<R: Real>(
        &self,
        g: &mut Graph<'_, R>,
        x: Var,
        memory: Var,
        seed: u64,
    ) -> Result<Var> {
        let h = self.self_norm.forward(g, x)?;
        let a = self.self_attn.forward(g, h, h, true, mix_seed(seed, 1))?;
        let x = g.add(x, a)?;
        let h = self.cross_norm.forward(g, x)?;
        let c = self
            .cross_attn
            .forward(g, h, memory, false, mix_seed(seed, 2))?;
        let x = g.add(x, c)?;
        let f = self.ffn.forward(g, x, mix_seed(seed, 3))?;
        Ok(g.add(x, f)?)
    }
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub config: DecoderConfig,
    pub embedding: ParamId,
    pub layers: Vec<DecoderLayer>,
    pub final_norm: LayerNorm,
    pub output: Linear,
}

impl Decoder {
    pub fn new(
        store: &mut ParamStore,
        group: GroupId,
        cfg: &DecoderConfig,
        init: &mut Init,
    ) -> Result<Self> {
        cfg.validate()?;
        let embedding = store.add(
            "decoder.embedding",
            init.normal(&[cfg.vocab_size, cfg.model_dim], 1.0),
            group,
        )?;
        let layers = (0..cfg.n_layers)
            .map(|i| DecoderLayer::new(store, group, &format!("decoder.layers.{i}"), cfg, init))
            .collect::<Result<_>>()?;
        Ok(Self {
            config: cfg.clone(),
            embedding,
            layers,
            final_norm: LayerNorm::new(store, group, "decoder.final_norm", cfg.model_dim)?,
            output: Linear::new(
                store,
                group,
                "decoder.output",
                cfg.model_dim,
                cfg.vocab_size,
                init,
            )?,
        })
    }

    /// Next-token logits `[L, vocab]` for the BOS-prefixed `tokens`.
    pub fn forward<R: Real>(
        &self,
        g: &mut Graph<'_, R>,
        memory: Var,
        tokens: &[usize],
        seed: u64,
    ) -> Result<Var> {
        let ms = g.shape(memory).to_vec();
        if ms.len() != 2 || ms[0] == 0 {
            return Err(Error::Data(format!(
                "decoder memory must be non-empty T x D, got {ms:?}"
            )));
        }
        if ms[1] != self.config.memory_dim {
            return Err(Error::Data(format!(
                "decoder memory width {} != configured {}",
                ms[1], self.config.memory_dim
            )));
        }
        if tokens.first() != Some(&BOS) {
            return Err(Error::Data("decoder input must start with BOS".into()));
        }
        if tokens.len() > self.config.max_len {
            return Err(crate::error::config_err(format!(
                "target of {} tokens exceeds max_len {}",
                tokens.len(),
                self.config.max_len
            )));
        }
        let table = g.param(self.embedding);
        let x = g.embedding(table, tokens)?;
        let pe = g.constant(positional_encoding(tokens.len(), self.config.model_dim))?;
        let x = g.add(x, pe)?;
        let mut x = g.dropout(x, self.config.dropout, mix_seed(seed, 0xe0))?;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(g, x, memory, mix_seed(seed, 0xa0 + i as u64))?;
        }
        let x = self.final_norm.forward(g, x)?;
        self.output.forward(g, x)
    }
}
