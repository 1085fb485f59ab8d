//! Length-bucketed, padded batches.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::squad::QaExample;
use super::vocab::{Vocabulary, PAD};
use super::DataError;
use crate::tensor::Tensor;

/// Characters kept per word.
pub const CHAR_LIMIT: usize = 16;

/// Context lengths within the same bucket differ by less than this.
const BUCKET_WIDTH: usize = 10;

/// Maps examples to id sequences.
#[derive(Debug, Clone)]
pub struct Featurizer {
    pub words: Vocabulary,
    pub chars: Vocabulary,
    pub char_limit: usize,
    /// Contexts are cut to this many tokens when batched.
    pub max_context: usize,
}

impl Featurizer {
    pub fn new(words: Vocabulary, chars: Vocabulary, max_context: usize) -> Self {
        Self {
            words,
            chars,
            char_limit: CHAR_LIMIT,
            max_context,
        }
    }

    fn word_ids(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.words.id(t)).collect()
    }

    /// `char_limit` ids per token, truncated or padded with `PAD`.
    pub fn char_ids(&self, tokens: &[String]) -> Vec<usize> {
        let mut out = Vec::with_capacity(tokens.len() * self.char_limit);
        for t in tokens {
            let mut n = 0;
            for c in t.chars().take(self.char_limit) {
                out.push(self.chars.id(c.encode_utf8(&mut [0; 4])));
                n += 1;
            }
            out.extend(std::iter::repeat_n(PAD, self.char_limit - n));
        }
        out
    }

    fn context_len(&self, ex: &QaExample) -> usize {
        ex.context_tokens.len().min(self.max_context).max(1)
    }
}

/// A padded batch. Id arrays are row-major; masks are 1 on real tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// Positions of the batched examples in the input slice.
    pub indices: Vec<usize>,
    pub size: usize,
    pub context_len: usize,
    pub question_len: usize,
    pub char_limit: usize,
    pub context_ids: Vec<usize>,
    pub context_chars: Vec<usize>,
    pub question_ids: Vec<usize>,
    pub question_chars: Vec<usize>,
    pub spans: Vec<(usize, usize)>,
    pub context_mask: Tensor,
    pub question_mask: Tensor,
}

impl Batch {
    /// Pads `examples[indices]` to the batch maxima.
    pub fn build(examples: &[QaExample], indices: &[usize], feat: &Featurizer) -> Self {
        let b = indices.len();
        let n = indices
            .iter()
            .map(|&i| feat.context_len(&examples[i]))
            .max()
            .unwrap_or(1);
        let m = indices
            .iter()
            .map(|&i| examples[i].question_tokens.len().max(1))
            .max()
            .unwrap_or(1);
        let cl = feat.char_limit;
        let mut batch = Batch {
            indices: indices.to_vec(),
            size: b,
            context_len: n,
            question_len: m,
            char_limit: cl,
            context_ids: vec![PAD; b * n],
            context_chars: vec![PAD; b * n * cl],
            question_ids: vec![PAD; b * m],
            question_chars: vec![PAD; b * m * cl],
            spans: Vec::with_capacity(b),
            context_mask: Tensor::zeros([b, n]),
            question_mask: Tensor::zeros([b, m]),
        };
        for (row, &i) in indices.iter().enumerate() {
            let ex = &examples[i];
            let len = ex.context_tokens.len().min(feat.max_context);
            let ctx = &ex.context_tokens[..len];
            batch.context_ids[row * n..row * n + len].copy_from_slice(&feat.word_ids(ctx));
            batch.context_chars[row * n * cl..(row * n + len) * cl]
                .copy_from_slice(&feat.char_ids(ctx));
            let q = &ex.question_tokens;
            batch.question_ids[row * m..row * m + q.len()].copy_from_slice(&feat.word_ids(q));
            batch.question_chars[row * m * cl..(row * m + q.len()) * cl]
                .copy_from_slice(&feat.char_ids(q));
            batch.context_mask.data_mut()[row * n..row * n + len].fill(1.0);
            batch.question_mask.data_mut()[row * m..row * m + q.len()].fill(1.0);
            let last = len.saturating_sub(1);
            let (s, e) = ex.answer_span;
            batch.spans.push((s.min(last), e.min(last)));
        }
        batch
    }

    pub fn context_lengths(&self) -> Vec<usize> {
        self.context_mask
            .rows()
            .map(|r| r.iter().filter(|&&v| v != 0.0).count())
            .collect()
    }
}

/// Buckets examples by context length, shuffles within buckets by `seed`,
/// and cuts consecutive runs into batches of `batch_size`.
pub fn make_batches(
    examples: &[QaExample],
    feat: &Featurizer,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<Batch>, DataError> {
    if examples.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    let batch_size = batch_size.max(1);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.sort_by_key(|&i| feat.context_len(&examples[i]) / BUCKET_WIDTH);
    Ok(order
        .chunks(batch_size)
        .map(|idx| Batch::build(examples, idx, feat))
        .collect())
}

/// Batches in input order, for inference.
pub fn sequential_batches(
    examples: &[QaExample],
    feat: &Featurizer,
    batch_size: usize,
) -> Vec<Batch> {
    let order: Vec<usize> = (0..examples.len()).collect();
    order
        .chunks(batch_size.max(1))
        .map(|idx| Batch::build(examples, idx, feat))
        .collect()
}
