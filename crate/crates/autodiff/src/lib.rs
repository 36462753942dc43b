//! Reverse-mode automatic differentiation over dense row-major tensors.
//!
//! A [`Graph`] records operations on a tape while computing forward values;
//! [`Graph::backward`] walks the tape in reverse and returns [`Gradients`].
//! Parameters live in a [`ParamStore`] outside of any graph, grouped into
//! [`ParameterGroup`]s that can be frozen or have their gradients scaled
//! before the [`Adam`] update.
//!
//! Everything is generic over [`Real`] so the same model code can run in
//! `f32` for training and in `f64` for gradient checking.

mod checkpoint;
mod error;
mod graph;
mod optim;
mod params;
mod real;
mod schedule;
mod tensor;

pub mod gradcheck;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use error::{Error, Result};
pub use graph::{seeded_uniform, Gradients, Graph, Mode, Var};
pub use optim::{Adam, AdamConfig, AdamState, GradBuffer};
pub use params::{GroupId, ParamEntry, ParamId, ParamStore, ParameterGroup};
pub use real::Real;
pub use schedule::LrSchedule;
pub use tensor::{lanes, Tensor};

/// Mixes two 64-bit values into a new seed (splitmix64 finalizer).
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b
        .wrapping_add(0x9e37_79b9_7f4a_7c15)
        .wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
