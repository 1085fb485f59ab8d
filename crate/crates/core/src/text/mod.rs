//! Dataset ingestion: SQuAD-format parsing, tokenization, vocabularies, word
//! vectors and padded batching.

mod batch;
mod squad;
mod tokenize;
mod vocab;

use std::path::Path;

use thiserror::Error;

pub use batch::{make_batches, sequential_batches, Batch, Featurizer, CHAR_LIMIT};
pub use squad::{
    load_gold_answers, parse_qa_json, parse_qa_str, to_squad_json, write_qa_json, LengthLimits,
    QaExample, Split,
};
pub use tokenize::{char_slice, tokenize, words, Token};
pub use vocab::{
    char_vocab_from_examples, load_word_vectors, parse_word_vectors, random_word_vectors,
    vocab_from_examples, Vocabulary, PAD, PAD_TOKEN, UNK, UNK_TOKEN,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed JSON: {0}")]
    MalformedJson(String),
    #[error("missing field \"{field}\" in {context}")]
    MissingField { field: String, context: String },
    #[error("answer of {id} does not overlap any context token")]
    UnalignableAnswer { id: String },
    #[error("word vector line {0} is malformed")]
    BadVectorLine(usize),
    #[error("word vector line {line}: expected {expected} values, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("dataset is empty")]
    EmptyDataset,
}

impl DataError {
    pub(crate) fn io(path: &Path, err: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }
}
