use seau_autodiff::{
    mix_seed, seeded_uniform, Graph, GroupId, Mode, ParamId, ParamStore, Real, Tensor, Var,
};

use super::config::EncoderConfig;
use super::layers::{
    positional_encoding, Activation, Attention, ConvModule, FeedForward, Init, LayerNorm, Linear,
};
use crate::error::{Error, Result};

/// Output length of the two stride-2 convolutions.
pub fn subsampled_len(t: usize) -> usize {
    t.div_ceil(2).div_ceil(2)
}

pub const MIN_INPUT_FRAMES: usize = 4;

/// Two 3x3 stride-2 convolutions over (time, feature) with ReLU, then a
/// linear map from `channels x reduced features` to the model width.
#[derive(Clone, Debug)]
pub struct ConvSubsample {
    pub conv1: (ParamId, ParamId),
    pub conv2: (ParamId, ParamId),
    pub proj: Linear,
    pub channels: usize,
    pub reduced_dim: usize,
}

impl ConvSubsample {
    pub fn new(
        store: &mut ParamStore,
        group: GroupId,
        cfg: &EncoderConfig,
        init: &mut Init,
    ) -> Result<Self> {
        let c = cfg.extractor_channels;
        let reduced_dim = subsampled_len(cfg.input_dim);
        let b1 = 1.0 / 3.0;
        let b2 = 1.0 / ((c * 9) as f64).sqrt();
        Ok(Self {
            conv1: (
                store.add("extractor.conv1.w", init.uniform(&[c, 1, 3, 3], b1), group)?,
                store.add("extractor.conv1.b", Tensor::zeros(&[c]), group)?,
            ),
            conv2: (
                store.add("extractor.conv2.w", init.uniform(&[c, c, 3, 3], b2), group)?,
                store.add("extractor.conv2.b", Tensor::zeros(&[c]), group)?,
            ),
            proj: Linear::new(
                store,
                group,
                "extractor.proj",
                c * reduced_dim,
                cfg.model_dim,
                init,
            )?,
            channels: c,
            reduced_dim,
        })
    }

    /// `x: [T, input_dim]` to `[T', model_dim]`.
    pub fn forward<R: Real>(&self, g: &mut Graph<'_, R>, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        if s.len() != 2 || s[0] < MIN_INPUT_FRAMES {
            return Err(Error::InputTooShort(format!(
                "conv subsampling needs at least {MIN_INPUT_FRAMES} frames, got shape {s:?}"
            )));
        }
        let h = g.reshape(x, &[1, s[0], s[1]])?;
        let (w, b) = (g.param(self.conv1.0), g.param(self.conv1.1));
        let h = g.conv2d(h, w, b, (2, 2))?;
        let h = g.relu(h)?;
        // advance one step so output j is centred on input frame 4j + 2,
        // the middle of its 4-frame window
        let (c, t1, f1) = {
            let s = g.shape(h);
            (s[0], s[1], s[2])
        };
        let tail = g.slice(h, 1, 1, t1 - 1)?;
        let pad = g.constant(Tensor::zeros(&[c, 1, f1]))?;
        let h = g.concat(&[tail, pad], 1)?;
        let (w, b) = (g.param(self.conv2.0), g.param(self.conv2.1));
        let h = g.conv2d(h, w, b, (2, 2))?;
        let h = g.relu(h)?;
        let t = g.shape(h)[1];
        let h = g.permute(h, &[1, 0, 2])?;
        let h = g.reshape(h, &[t, self.channels * self.reduced_dim])?;
        self.proj.forward(g, h)
    }
}

/// Macaron conformer block: half FFN, self-attention, convolution module,
/// half FFN, final layer norm, with residual connections.
#[derive(Clone, Debug)]
pub struct ConformerBlock {
    pub ffn1: FeedForward,
    pub attn_norm: LayerNorm,
    pub attn: Attention,
    pub conv: ConvModule,
    pub ffn2: FeedForward,
    pub final_norm: LayerNorm,
}

impl ConformerBlock {
    pub fn new(
        store: &mut ParamStore,
        group: GroupId,
        name: &str,
        cfg: &EncoderConfig,
        init: &mut Init,
    ) -> Result<Self> {
        let (d, p) = (cfg.model_dim, cfg.dropout);
        Ok(Self {
            ffn1: FeedForward::new(
                store,
                group,
                &format!("{name}.ffn1"),
                d,
                cfg.ffn_dim,
                Activation::Swish,
                p,
                init,
            )?,
            attn_norm: LayerNorm::new(store, group, &format!("{name}.attn_norm"), d)?,
            attn: Attention::new(
                store,
                group,
                &format!("{name}.attn"),
                d,
                d,
                cfg.n_heads,
                p,
                init,
            )?,
            conv: ConvModule::new(
                store,
                group,
                &format!("{name}.conv"),
                d,
                cfg.conv_kernel,
                p,
                init,
            )?,
            ffn2: FeedForward::new(
                store,
                group,
                &format!("{name}.ffn2"),
                d,
                cfg.ffn_dim,
                Activation::Swish,
                p,
                init,
            )?,
            final_norm: LayerNorm::new(store, group, &format!("{name}.final_norm"), d)?,
        })
    }

    pub fn forward<R: Real>(&self, g: &mut Graph<'_, R>, x: Var, seed: u64) -> Result<Var> {
        let f = self.ffn1.forward(g, x, mix_seed(seed, 1))?;
        let f = g.scale(f, 0.5)?;
        let x = g.add(x, f)?;
        let h = self.attn_norm.forward(g, x)?;
        let a = self.attn.forward(g, h, h, false, mix_seed(seed, 2))?;
        let x = g.add(x, a)?;
        let c = self.conv.forward(g, x, mix_seed(seed, 3))?;
        let x = g.add(x, c)?;
        let f = self.ffn2.forward(g, x, mix_seed(seed, 4))?;
        let f = g.scale(f, 0.5)?;
        let x = g.add(x, f)?;
        self.final_norm.forward(g, x)
    }
}

#[derive(Clone, Debug)]
pub struct EncoderOutput {
    pub hidden: Var,
    /// Output of every block, bottom to top; `layers[n_blocks - 1] == hidden`.
    pub layers: Vec<Var>,
    /// Subsampler output before masking and dropout.
    pub extractor_out: Var,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub extractor: ConvSubsample,
    pub blocks: Vec<ConformerBlock>,
}

impl Encoder {
    /// Registers parameters under `extractor.*` (group `extractor_group`) and
    /// `encoder.*` (group `encoder_group`).
    pub fn new(
        store: &mut ParamStore,
        extractor_group: GroupId,
        encoder_group: GroupId,
        cfg: &EncoderConfig,
        init: &mut Init,
    ) -> Result<Self> {
        cfg.validate()?;
        let extractor = ConvSubsample::new(store, extractor_group, cfg, init)?;
        let blocks = (0..cfg.n_blocks)
            .map(|i| {
                ConformerBlock::new(
                    store,
                    encoder_group,
                    &format!("encoder.blocks.{i}"),
                    cfg,
                    init,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            config: cfg.clone(),
            extractor,
            blocks,
        })
    }

    /// Blocks skipped by layerdrop for this seed in training mode.
    pub fn dropped_blocks(&self, seed: u64) -> Vec<bool> {
        (0..self.blocks.len())
            .map(|i| seeded_uniform(mix_seed(seed, 0x1d00 + i as u64)) < self.config.layerdrop)
            .collect()
    }

    pub fn features<R: Real>(&self, g: &mut Graph<'_, R>, features: &Tensor<f32>) -> Result<Var> {
        if features.rank() != 2 || features.cols() != self.config.input_dim {
            return Err(Error::Data(format!(
                "encoder expects T x {} features, got {:?}",
                self.config.input_dim,
                features.shape()
            )));
        }
        Ok(g.constant(features.cast())?)
    }

    /// Subsampler, optional row replacement by `mask`, dropout, positions,
    /// then the conformer stack.
    pub fn forward<R: Real>(
        &self,
        g: &mut Graph<'_, R>,
        x: Var,
        mask: Option<(&[bool], ParamId)>,
        seed: u64,
    ) -> Result<EncoderOutput> {
        let extractor_out = self.extractor.forward(g, x)?;
        let mut h = extractor_out;
        if let Some((rows, emb)) = mask {
            let e = g.param(emb);
            h = g.replace_rows(h, e, rows)?;
        }
        let h = g.dropout(h, self.config.dropout, mix_seed(seed, 0xd0))?;
        let mut h = h;
        if self.config.positional_encoding {
            let t = g.shape(h)[0];
            let pe = g.constant(positional_encoding(t, self.config.model_dim))?;
            h = g.add(h, pe)?;
        }
        let dropped = if g.mode() == Mode::Train {
            self.dropped_blocks(seed)
        } else {
            vec![false; self.blocks.len()]
        };
        let mut layers = Vec::with_capacity(self.blocks.len());
        for (i, block) in self.blocks.iter().enumerate() {
            if !dropped[i] {
                h = block.forward(g, h, mix_seed(seed, 0xb0 + i as u64))?;
            }
            layers.push(h);
        }
        Ok(EncoderOutput {
            hidden: h,
            layers,
            extractor_out,
        })
    }
}
