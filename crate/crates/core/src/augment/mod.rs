//! Back-translation data augmentation.

mod extract;
mod paraphrase;
mod sampler;
mod sentences;
mod translate;

use thiserror::Error;

use crate::text::DataError;

pub use extract::{char_2gram_score, extract_answer, ExtractedAnswer, DEFAULT_THRESHOLD};
pub use paraphrase::{
    augment_dataset, paraphrase_document, paraphrase_sentence, paraphrase_sentences,
    DocumentParaphrases, ParaphraseOptions,
};
pub use sampler::{mix_datasets, MixedSampler};
pub use sentences::{split_sentences, Sentence};
pub use translate::{Direction, HttpTranslator, MockTranslator, ScriptedTranslator, Translator};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AugmentError {
    #[error("translator unavailable: {0}")]
    TranslatorUnavailable(String),
    #[error("translator protocol error: {0}")]
    TranslatorProtocol(String),
    #[error("pool {0} has positive weight but no examples")]
    EmptyWeightedPool(usize),
    #[error("invalid mix ratio: {0}")]
    InvalidRatio(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[cfg(test)]
mod tests;
