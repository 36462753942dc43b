//! Speech recognition: subword tokenization, encoder-decoder training and
//! fine-tuning, decoding, and word error rate.

mod bpe;
mod decode;
mod train;
mod wer;

pub use bpe::{BpeModel, SPECIALS, WORD_START};
pub use decode::{beam_decode, greedy_decode, Hypothesis};
pub use train::{
    asr_checkpoint_config, evaluate_loss, load_asr, teacher_forcing, train_asr, AsrExample,
    AsrInit, AsrOutcome, AsrTrainConfig,
};
pub use wer::{align_words, score, wer, EditCounts, ScoreReport, WerResult};
