//! Model components: convolutional subsampler, conformer encoder,
//! transformer decoder, specaugment and the encoder-decoder assembly.
//!
//! Forward functions are generic over the float type so composite blocks
//! can be gradient-checked in double precision. Training vs evaluation is
//! the [`Mode`](seau_autodiff::Mode) of the graph; randomness (dropout,
//! layerdrop) flows from the `seed` argument.

mod config;
mod decoder;
mod encoder;
mod layers;
mod model;
mod specaugment;

pub use config::{DecoderConfig, EncoderConfig, Preset};
pub use decoder::{Decoder, DecoderLayer, BOS, EOS, PAD, UNK};
pub use encoder::{subsampled_len, ConformerBlock, ConvSubsample, Encoder, EncoderOutput};
pub use layers::{
    positional_encoding, Attention, ConvModule, FeedForward, Init, LayerNorm, Linear,
};
pub use model::{AsrModel, GROUP_DECODER, GROUP_ENCODER, GROUP_EXTRACTOR, GROUP_PROJECTION};
pub use specaugment::{SpecAugmentConfig, SpecAugmentMasks};
