//! Word and character embeddings, character convolution with max pooling,
//! projection to the hidden size and a two-layer highway network.

use rand_chacha::ChaCha8Rng;

use super::params::{Bound, Init, ParamId, ParamStore};
use super::{apply_dropout, ModelError};
use crate::tensor::{depthwise_separable_conv1d, gather_rows, Tape, Tensor, Var};
use crate::text::{PAD, UNK};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingConfig {
    pub char_dim: usize,
    pub char_kernel: usize,
    pub hidden: usize,
    pub highway_layers: usize,
    pub highway_gate_bias: f64,
    pub word_dropout: f64,
    pub char_dropout: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct HighwayParams {
    pub gate_w: ParamId,
    pub gate_b: ParamId,
    pub transform_w: ParamId,
    pub transform_b: ParamId,
}

#[derive(Debug, Clone)]
pub struct EmbeddingLayer {
    pub config: EmbeddingConfig,
    pub word_dim: usize,
    /// Frozen pretrained vectors; the UNK row is kept at zero and replaced by
    /// the trainable `unk` vector.
    pub word_table: ParamId,
    pub unk: ParamId,
    pub char_table: ParamId,
    pub char_depth: ParamId,
    pub char_point: ParamId,
    pub char_bias: ParamId,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    pub highway: Vec<HighwayParams>,
}

/// Per-side token ids for one batch.
#[derive(Debug, Clone, Copy)]
pub struct TokenIds<'a> {
    pub batch: usize,
    pub len: usize,
    pub char_limit: usize,
    pub words: &'a [usize],
    pub chars: &'a [usize],
}

impl EmbeddingLayer {
    pub(crate) fn new(
        store: &mut ParamStore,
        init: &mut Init,
        config: EmbeddingConfig,
        word_vectors: Tensor,
        char_vocab: usize,
    ) -> Result<Self, ModelError> {
        if word_vectors.rank() != 2 || word_vectors.shape()[0] <= UNK {
            return Err(ModelError::Config(format!(
                "word vectors must be a [V, p] table with V > {UNK}, got {:?}",
                word_vectors.shape()
            )));
        }
        if config.char_kernel.is_multiple_of(2) {
            return Err(ModelError::Config(format!(
                "char kernel {} is even",
                config.char_kernel
            )));
        }
        let pw = word_vectors.shape()[1];
        let (pc, d) = (config.char_dim, config.hidden);
        let mut word_vectors = word_vectors;
        let unk_init = word_vectors.data()[UNK * pw..(UNK + 1) * pw].to_vec();
        word_vectors.data_mut()[UNK * pw..(UNK + 1) * pw].fill(0.0);
        let word_table = store.add("embedding.word_table", word_vectors, false);
        let unk = store.add("embedding.unk", Tensor::new([pw], unk_init)?, true);
        let mut chars = init.uniform(&[char_vocab.max(UNK + 1), pc], 0.1);
        chars.data_mut()[..pc].fill(0.0);
        let char_table = store.add("embedding.char_table", chars, true);
        let k = config.char_kernel;
        let char_depth = store.add("embedding.char_conv.depth", init.glorot(&[k, pc]), true);
        let char_point = store.add("embedding.char_conv.point", init.glorot(&[pc, pc]), true);
        let char_bias = store.add("embedding.char_conv.bias", Tensor::zeros([pc]), true);
        let proj_w = store.add("embedding.proj.w", init.glorot(&[pw + pc, d]), true);
        let proj_b = store.add("embedding.proj.b", Tensor::zeros([d]), true);
        let highway = (0..config.highway_layers)
            .map(|i| {
                let p = format!("embedding.highway{i}");
                HighwayParams {
                    gate_w: store.add(format!("{p}.gate.w"), init.glorot(&[d, d]), true),
                    gate_b: store.add(
                        format!("{p}.gate.b"),
                        Tensor::full([d], config.highway_gate_bias),
                        true,
                    ),
                    transform_w: store.add(format!("{p}.transform.w"), init.glorot(&[d, d]), true),
                    transform_b: store.add(format!("{p}.transform.b"), Tensor::zeros([d]), true),
                }
            })
            .collect();
        Ok(Self {
            config,
            word_dim: pw,
            word_table,
            unk,
            char_table,
            char_depth,
            char_point,
            char_bias,
            proj_w,
            proj_b,
            highway,
        })
    }

    /// Embeds one side of a batch to `[B, L, d]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        bound: &Bound,
        ids: TokenIds<'_>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var, ModelError> {
        let TokenIds {
            batch: b,
            len,
            char_limit,
            words,
            chars,
        } = ids;
        let pw = self.word_dim;
        let pc = self.config.char_dim;
        let table = &store.get(self.word_table).value;
        let word = tape.constant(gather_rows(table, words, &[b, len])?);
        let unk_mask = Tensor::from_fn([b, len, 1], |i| f64::from(words[i] == UNK));
        let unk_mask = tape.constant(unk_mask);
        let unk = tape.mul(unk_mask, bound.var(self.unk))?;
        let word = tape.add(word, unk)?;
        debug_assert_eq!(tape.shape(word), &[b, len, pw]);
        let word = apply_dropout(tape, word, self.config.word_dropout, rng.as_deref_mut())?;

        let ch = tape.embedding(bound.var(self.char_table), chars, &[b * len, char_limit])?;
        let ch = apply_dropout(tape, ch, self.config.char_dropout, rng)?;
        let ch = depthwise_separable_conv1d(
            tape,
            ch,
            bound.var(self.char_depth),
            bound.var(self.char_point),
            bound.var(self.char_bias),
        )?;
        let ch = tape.relu(ch);
        let char_mask = Tensor::from_fn([b * len, char_limit, 1], |i| f64::from(chars[i] != PAD));
        let char_mask = tape.constant(char_mask);
        let ch = tape.mul(ch, char_mask)?;
        let ch = tape.max_over_axis(ch, 1)?;
        let ch = tape.reshape(ch, &[b, len, pc])?;

        let x = tape.concat(&[word, ch], 2)?;
        let x = tape.matmul(x, bound.var(self.proj_w))?;
        let mut x = tape.add(x, bound.var(self.proj_b))?;
        for hw in &self.highway {
            x = highway(tape, bound, hw, x)?;
        }
        Ok(x)
    }
}

/// `y = g * T(x) + (1 - g) * x` with `g = sigmoid(x Wg + bg)` and
/// `T(x) = relu(x Wt + bt)`.
pub fn highway(tape: &mut Tape, bound: &Bound, p: &HighwayParams, x: Var) -> Result<Var, ModelError> {
    let g = tape.matmul(x, bound.var(p.gate_w))?;
    let g = tape.add(g, bound.var(p.gate_b))?;
    let g = tape.sigmoid(g);
    let t = tape.matmul(x, bound.var(p.transform_w))?;
    let t = tape.add(t, bound.var(p.transform_b))?;
    let t = tape.relu(t);
    let diff = tape.sub(t, x)?;
    let gated = tape.mul(g, diff)?;
    Ok(tape.add(x, gated)?)
}
