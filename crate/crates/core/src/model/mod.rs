//! The QANet reader: embeddings, encoder stacks, context-query attention and
//! the span head, built on the tape in [`crate::tensor`].

pub mod attention;
pub mod embedding;
pub mod encoder;
mod gradcheck;
pub mod output;
pub mod params;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Tape, Tensor, TensorError, Var};
use crate::text::Batch;
use embedding::{EmbeddingConfig, EmbeddingLayer, TokenIds};
use encoder::{EncoderStack, EncoderStackConfig};
pub use gradcheck::check_model_gradients;
pub use output::{dp_span_inference, enumerate_best_span, SpanPrediction};
pub use params::{Bound, Param, ParamId, ParamStore};

/// Generator behind every random draw of the model and trainer.
pub type ModelRng = ChaCha8Rng;

/// Passes through the model encoder, all sharing one set of weights.
pub const MODEL_ENCODER_PASSES: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("gold index {index} of row {row} is masked")]
    GoldIndexMasked { row: usize, index: usize },
    #[error("empty distribution")]
    EmptyDistribution,
    #[error("dimension {0} is odd")]
    OddDimension(usize),
    #[error("tensor {name}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("tensor {0} is missing")]
    MissingTensor(String),
    #[error("invalid model config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub word_dim: usize,
    pub char_dim: usize,
    pub char_kernel: usize,
    pub hidden: usize,
    pub heads: usize,
    pub embedding_blocks: usize,
    pub embedding_convs: usize,
    pub embedding_kernel: usize,
    pub model_blocks: usize,
    pub model_convs: usize,
    pub model_kernel: usize,
    pub survival_last: f64,
    pub layer_dropout: f64,
    pub word_dropout: f64,
    pub char_dropout: f64,
    pub highway_layers: usize,
    pub highway_gate_bias: f64,
    pub max_answer_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            word_dim: 300,
            char_dim: 200,
            char_kernel: 5,
            hidden: 128,
            heads: 8,
            embedding_blocks: 1,
            embedding_convs: 4,
            embedding_kernel: 7,
            model_blocks: 7,
            model_convs: 2,
            model_kernel: 5,
            survival_last: 0.9,
            layer_dropout: 0.1,
            word_dropout: 0.1,
            char_dropout: 0.05,
            highway_layers: 2,
            highway_gate_bias: -2.0,
            max_answer_len: 30,
        }
    }
}

impl ModelConfig {
    pub fn embedding_stack(&self) -> EncoderStackConfig {
        EncoderStackConfig {
            num_blocks: self.embedding_blocks,
            num_conv_layers: self.embedding_convs,
            kernel_size: self.embedding_kernel,
            hidden: self.hidden,
            heads: self.heads,
            survival_last: self.survival_last,
            layer_dropout: self.layer_dropout,
        }
    }

    pub fn model_stack(&self) -> EncoderStackConfig {
        EncoderStackConfig {
            num_blocks: self.model_blocks,
            num_conv_layers: self.model_convs,
            kernel_size: self.model_kernel,
            ..self.embedding_stack()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.embedding_stack().validate()?;
        self.model_stack().validate()?;
        for (name, p) in [
            ("survival_last", 1.0 - self.survival_last),
            ("layer_dropout", self.layer_dropout),
            ("word_dropout", self.word_dropout),
            ("char_dropout", self.char_dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(ModelError::Config(format!("{name} out of range")));
            }
        }
        if self.max_answer_len == 0 {
            return Err(ModelError::Config("max_answer_len must be positive".into()));
        }
        Ok(())
    }
}

/// Inverted dropout; identity when `rng` is `None` or `rate` is 0.
pub fn apply_dropout(
    tape: &mut Tape,
    x: Var,
    rate: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Var, ModelError> {
    let Some(rng) = rng else { return Ok(x) };
    if rate <= 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - rate);
    let mask = Tensor::from_fn(tape.shape(x).to_vec(), |_| {
        if rng.random::<f64>() < rate {
            0.0
        } else {
            keep
        }
    });
    Ok(tape.dropout(x, &mask)?)
}

/// Output of one forward pass: start and end distributions, `[B, n]`.
#[derive(Debug, Clone, Copy)]
pub struct SpanHeads {
    pub p1: Var,
    pub p2: Var,
}

#[derive(Debug, Clone)]
pub struct QaNet {
    pub config: ModelConfig,
    pub params: ParamStore,
    embedding: EmbeddingLayer,
    embedding_encoder: EncoderStack,
    w_c: ParamId,
    w_q: ParamId,
    w_qc: ParamId,
    fuse_proj: ParamId,
    model_encoder: EncoderStack,
    w1: ParamId,
    w2: ParamId,
}

impl QaNet {
    /// Builds a model around `word_vectors: [V, word_dim]`, initialising every
    /// trainable weight from `seed`.
    pub fn new(
        config: ModelConfig,
        word_vectors: Tensor,
        char_vocab: usize,
        seed: u64,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        if word_vectors.shape().get(1) != Some(&config.word_dim) {
            return Err(ModelError::ShapeMismatch {
                name: "embedding.word_table".into(),
                expected: vec![word_vectors.shape().first().copied().unwrap_or(0), config.word_dim],
                found: word_vectors.shape().to_vec(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = params::Init { rng: &mut rng };
        let mut store = ParamStore::new();
        let d = config.hidden;
        let embedding = EmbeddingLayer::new(
            &mut store,
            &mut init,
            EmbeddingConfig {
                char_dim: config.char_dim,
                char_kernel: config.char_kernel,
                hidden: d,
                highway_layers: config.highway_layers,
                highway_gate_bias: config.highway_gate_bias,
                word_dropout: config.word_dropout,
                char_dropout: config.char_dropout,
            },
            word_vectors,
            char_vocab,
        )?;
        let embedding_encoder = EncoderStack::new(
            &mut store,
            &mut init,
            "embedding_encoder",
            config.embedding_stack(),
        )?;
        let w_c = store.add("cq.w_c", init.glorot(&[d, 1]), true);
        let w_q = store.add("cq.w_q", init.glorot(&[d, 1]), true);
        let w_qc = store.add("cq.w_qc", init.glorot(&[d, 1]), true);
        let fuse_proj = store.add("cq.proj", init.glorot(&[4 * d, d]), true);
        let model_encoder =
            EncoderStack::new(&mut store, &mut init, "model_encoder", config.model_stack())?;
        let w1 = store.add("output.w1", init.glorot(&[2 * d, 1]), true);
        let w2 = store.add("output.w2", init.glorot(&[2 * d, 1]), true);
        Ok(Self {
            config,
            params: store,
            embedding,
            embedding_encoder,
            w_c,
            w_q,
            w_qc,
            fuse_proj,
            model_encoder,
            w1,
            w2,
        })
    }

    /// Forward pass. Training mode (dropout, stochastic depth) is on exactly
    /// when `rng` is given.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        batch: &Batch,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<SpanHeads, ModelError> {
        let (b, n, m) = (batch.size, batch.context_len, batch.question_len);
        let context = TokenIds {
            batch: b,
            len: n,
            char_limit: batch.char_limit,
            words: &batch.context_ids,
            chars: &batch.context_chars,
        };
        let question = TokenIds {
            len: m,
            words: &batch.question_ids,
            chars: &batch.question_chars,
            ..context
        };
        let emb = &self.embedding;
        let c = emb.forward(tape, &self.params, bound, context, rng.as_deref_mut())?;
        let q = emb.forward(tape, &self.params, bound, question, rng.as_deref_mut())?;
        let enc = &self.embedding_encoder;
        let c = enc.forward(tape, bound, c, &batch.context_mask, rng.as_deref_mut())?;
        let q = enc.forward(tape, bound, q, &batch.question_mask, rng.as_deref_mut())?;

        let s = attention::trilinear_similarity(
            tape,
            c,
            q,
            bound.var(self.w_c),
            bound.var(self.w_q),
            bound.var(self.w_qc),
        )?;
        let mask = attention::pair_mask(&batch.context_mask, &batch.question_mask)?;
        let (s_row, s_col) = attention::similarity_softmaxes(tape, s, &mask)?;
        let a = attention::c2q_attention(tape, s_row, q)?;
        let bq = attention::q2c_attention(tape, s_row, s_col, c)?;
        let fused = attention::fuse(tape, c, a, bq)?;
        let x = tape.matmul(fused, bound.var(self.fuse_proj))?;
        let mut x = apply_dropout(tape, x, self.config.layer_dropout, rng.as_deref_mut())?;

        let mut outs = Vec::with_capacity(MODEL_ENCODER_PASSES);
        for _ in 0..MODEL_ENCODER_PASSES {
            x = self
                .model_encoder
                .forward(tape, bound, x, &batch.context_mask, rng.as_deref_mut())?;
            outs.push(x);
        }
        let (p1, p2) = output::span_distributions(
            tape,
            [outs[0], outs[1], outs[2]],
            bound.var(self.w1),
            bound.var(self.w2),
            &batch.context_mask,
        )?;
        Ok(SpanHeads { p1, p2 })
    }

    /// Mean span loss of `batch` against its gold spans.
    pub fn loss(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        batch: &Batch,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var, ModelError> {
        let heads = self.forward(tape, bound, batch, rng)?;
        output::span_loss(tape, heads.p1, heads.p2, &batch.spans, &batch.context_mask)
    }

    /// Eval-mode best span per batch row.
    pub fn predict(&self, batch: &Batch) -> Result<Vec<SpanPrediction>, ModelError> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let heads = self.forward(&mut tape, &bound, batch, None)?;
        let n = batch.context_len;
        let (p1, p2) = (tape.value(heads.p1).data(), tape.value(heads.p2).data());
        batch
            .context_lengths()
            .iter()
            .enumerate()
            .map(|(row, &len)| {
                let r = row * n..row * n + len.max(1);
                dp_span_inference(&p1[r.clone()], &p2[r], self.config.max_answer_len)
            })
            .collect()
    }

    /// Replaces parameter values by name, checking shapes.
    pub fn load_params<'a>(
        &mut self,
        values: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
    ) -> Result<(), ModelError> {
        self.params.load(values)
    }
}
