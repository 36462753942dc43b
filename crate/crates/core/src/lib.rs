pub mod asr;
pub mod config;
pub mod corpus;
pub mod error;
pub mod experiment;
pub mod format;
pub mod frontend;
pub mod nn;
pub mod pipeline;
pub mod pretrain;
pub mod quantizer;
pub mod study;
pub mod train;

pub use error::{Error, Result};
