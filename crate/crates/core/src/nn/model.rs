use seau_autodiff::{mix_seed, Graph, ParamStore, Real, Tensor, Var};

use super::config::{DecoderConfig, EncoderConfig};
use super::decoder::Decoder;
use super::encoder::Encoder;
use super::layers::{Init, Linear};
use crate::error::{config_err, Result};

pub const GROUP_EXTRACTOR: &str = "extractor";
pub const GROUP_ENCODER: &str = "encoder";
pub const GROUP_PROJECTION: &str = "projection";
pub const GROUP_DECODER: &str = "decoder";

/// Encoder, linear projection to the decoder memory width, decoder.
#[derive(Clone, Debug)]
pub struct AsrModel {
    pub encoder: Encoder,
    pub projection: Linear,
    pub decoder: Decoder,
}

impl AsrModel {
    pub fn new(
        store: &mut ParamStore,
        enc: &EncoderConfig,
        dec: &DecoderConfig,
        seed: u64,
    ) -> Result<Self> {
        if dec.memory_dim != enc.projection_dim {
            return Err(config_err(format!(
                "decoder memory_dim {} must equal encoder projection_dim {}",
                dec.memory_dim, enc.projection_dim
            )));
        }
        let mut init = Init::new(seed);
        let gx = store.group(GROUP_EXTRACTOR);
        let ge = store.group(GROUP_ENCODER);
        let gp = store.group(GROUP_PROJECTION);
        let gd = store.group(GROUP_DECODER);
        let encoder = Encoder::new(store, gx, ge, enc, &mut init)?;
        let projection = Linear::new(
            store,
            gp,
            "projection",
            enc.model_dim,
            enc.projection_dim,
            &mut init,
        )?;
        let decoder = Decoder::new(store, gd, dec, &mut init)?;
        Ok(Self {
            encoder,
            projection,
            decoder,
        })
    }

    /// Encoder output projected to the decoder memory width.
    pub fn memory<R: Real>(
        &self,
        g: &mut Graph<'_, R>,
        features: &Tensor<f32>,
        seed: u64,
    ) -> Result<Var> {
        let x = self.encoder.features(g, features)?;
        let out = self.encoder.forward(g, x, None, mix_seed(seed, 1))?;
        self.projection.forward(g, out.hidden)
    }

    /// Teacher-forced logits for `tokens_in` (BOS-prefixed).
    pub fn logits<R: Real>(
        &self,
        g: &mut Graph<'_, R>,
        features: &Tensor<f32>,
        tokens_in: &[usize],
        seed: u64,
    ) -> Result<Var> {
        let memory = self.memory(g, features, seed)?;
        self.decoder
            .forward(g, memory, tokens_in, mix_seed(seed, 2))
    }
}
