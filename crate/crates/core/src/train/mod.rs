//! Training loop, optimizer state, checkpoints and inference helpers.

mod checkpoint;
mod optim;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{mix_datasets, AugmentError};
use crate::config::{ConfigError, RunConfig};
use crate::eval::{evaluate, golds_of, EvalError, EvalResult};
use crate::model::{ModelError, ModelRng, QaNet};
use crate::tensor::{Tape, Tensor, TensorError};
use crate::text::{
    char_vocab_from_examples, load_word_vectors, make_batches, random_word_vectors,
    parse_qa_json, sequential_batches, vocab_from_examples, Batch, DataError, Featurizer,
    LengthLimits, QaExample, Split,
};

pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
pub use optim::{adam_step, lr_schedule, AdamState, Ema};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("bad checkpoint {0}")]
    Checkpoint(String),
    #[error("no gradient for trainable tensor {0}")]
    MissingGradient(String),
    #[error("loss is not finite at step {0}")]
    NonFiniteLoss(u64),
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        Self::Model(e.into())
    }
}

impl TrainError {
    pub(crate) fn io(path: &Path, err: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dev_em: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dev_f1: Option<f64>,
}

/// Loads `data.train` and `data.dev`. When `data.augmented` names extra
/// pools, the training set becomes a seeded draw from all pools weighted by
/// `augment.mix_ratio`, sized so the original pool is visited about once.
pub fn load_datasets(config: &RunConfig) -> Result<(Vec<QaExample>, Vec<QaExample>), TrainError> {
    let limits = LengthLimits {
        max_context: config.data.max_context,
        max_answer: config.data.max_answer,
    };
    let train_path = config
        .data
        .train
        .as_ref()
        .ok_or_else(|| ConfigError::Invalid("data.train is not set".into()))?;
    let mut train = parse_qa_json(train_path, Split::Train, limits)?;
    let dev = match &config.data.dev {
        Some(p) => parse_qa_json(p, Split::Eval, limits)?,
        None => Vec::new(),
    };
    if !config.data.augmented.is_empty() {
        let mut pools = vec![train];
        for p in &config.data.augmented {
            pools.push(parse_qa_json(p, Split::Train, limits)?);
        }
        let weights = &config.augment.mix_ratio[..pools.len()];
        let total: f64 = weights.iter().sum();
        let size = if weights[0] > 0.0 {
            (pools[0].len() as f64 * total / weights[0]).ceil() as usize
        } else {
            pools.iter().map(Vec::len).sum()
        };
        let refs: Vec<&[QaExample]> = pools.iter().map(Vec::as_slice).collect();
        train = mix_datasets(&refs, weights, size, config.seed ^ 0x004D_4958)?;
    }
    Ok((train, dev))
}

/// Builds the vocabularies and the word-vector table for a run.
pub fn build_featurizer(
    config: &RunConfig,
    train: &[QaExample],
    dev: &[QaExample],
) -> Result<(Featurizer, Tensor), TrainError> {
    let all: Vec<QaExample> = train.iter().chain(dev).cloned().collect();
    let chars = char_vocab_from_examples(&all);
    let (words, table) = match &config.data.word_vectors {
        Some(path) => load_word_vectors(path, config.model.word_dim, config.seed)?,
        None => {
            let words = vocab_from_examples(&all, config.data.min_word_count);
            let table = random_word_vectors(&words, config.model.word_dim, config.seed);
            (words, table)
        }
    };
    Ok((Featurizer::new(words, chars, config.data.max_context), table))
}

fn epoch_seed(seed: u64, epoch: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ epoch.wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Single-threaded, seed-deterministic trainer.
pub struct Trainer {
    pub config: RunConfig,
    pub model: QaNet,
    pub featurizer: Featurizer,
    pub adam: AdamState,
    pub ema: Ema,
    pub step: u64,
    rng: ModelRng,
    train: Vec<QaExample>,
    dev: Vec<QaExample>,
    epoch: Option<(u64, Vec<Batch>)>,
}

impl Trainer {
    pub fn new(
        config: RunConfig,
        train: Vec<QaExample>,
        dev: Vec<QaExample>,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        if train.is_empty() {
            return Err(DataError::EmptyDataset.into());
        }
        let (featurizer, table) = build_featurizer(&config, &train, &dev)?;
        let model = QaNet::new(config.model.clone(), table, featurizer.chars.len(), config.seed)?;
        let adam = AdamState::new(&model.params);
        let ema = Ema::new(&model.params, config.optim.ema_decay);
        Ok(Self {
            rng: Self::dropout_rng(config.seed),
            config,
            model,
            featurizer,
            adam,
            ema,
            step: 0,
            train,
            dev,
            epoch: None,
        })
    }

    fn dropout_rng(seed: u64) -> ModelRng {
        let mut rng = ModelRng::seed_from_u64(seed);
        rng.set_stream(1);
        rng
    }

    /// Restores every piece of training state saved by [`Trainer::checkpoint`].
    pub fn resume(
        ckpt: &Checkpoint,
        train: Vec<QaExample>,
        dev: Vec<QaExample>,
    ) -> Result<Self, TrainError> {
        let config = ckpt.config.clone();
        if train.is_empty() {
            return Err(DataError::EmptyDataset.into());
        }
        let (model, featurizer) = model_from_checkpoint(ckpt, false)?;
        let mut adam = AdamState::new(&model.params);
        let mut ema = Ema::new(&model.params, config.optim.ema_decay);
        adam.step = ckpt.step;
        for (id, p) in model.params.iter().filter(|(_, p)| p.trainable) {
            let i = id.index();
            let get = |prefix: &str| -> Result<Tensor, TrainError> {
                let name = format!("{prefix}/{}", p.name);
                let t = ckpt
                    .tensor(&name)
                    .ok_or_else(|| ModelError::MissingTensor(name.clone()))?;
                if t.shape() != p.value.shape() {
                    return Err(ModelError::ShapeMismatch {
                        name,
                        expected: p.value.shape().to_vec(),
                        found: t.shape().to_vec(),
                    }
                    .into());
                }
                Ok(t.clone())
            };
            adam.m[i] = Some(get("adam.m")?);
            adam.v[i] = Some(get("adam.v")?);
            ema.shadow[i] = Some(get("ema")?);
        }
        let mut rng = Self::dropout_rng(config.seed);
        rng.set_word_pos(ckpt.rng_word_pos);
        Ok(Self {
            config,
            model,
            featurizer,
            adam,
            ema,
            step: ckpt.step,
            rng,
            train,
            dev,
            epoch: None,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut tensors = Vec::new();
        for (id, p) in self.model.params.iter() {
            tensors.push((format!("param/{}", p.name), p.value.clone()));
            let i = id.index();
            for (prefix, slot) in [
                ("adam.m", &self.adam.m[i]),
                ("adam.v", &self.adam.v[i]),
                ("ema", &self.ema.shadow[i]),
            ] {
                if let Some(t) = slot {
                    tensors.push((format!("{prefix}/{}", p.name), t.clone()));
                }
            }
        }
        Checkpoint {
            step: self.step,
            config: self.config.clone(),
            words: self.featurizer.words.clone(),
            chars: self.featurizer.chars.clone(),
            rng_word_pos: self.rng.get_word_pos(),
            tensors,
        }
    }

    /// The batch used at `step` (1-based): batches are rebuilt each epoch
    /// from a seed derived from (seed, epoch) and visited in a shuffled order.
    fn batch_for(&mut self, step: u64) -> Result<Batch, TrainError> {
        let bs = self.config.optim.batch_size;
        let per_epoch = self.train.len().div_ceil(bs) as u64;
        let epoch = (step - 1) / per_epoch;
        if self.epoch.as_ref().is_none_or(|(e, _)| *e != epoch) {
            let seed = epoch_seed(self.config.seed, epoch);
            let mut batches = make_batches(&self.train, &self.featurizer, bs, seed)?;
            batches.shuffle(&mut ModelRng::seed_from_u64(seed ^ 0x5EED));
            self.epoch = Some((epoch, batches));
        }
        let batches = &self.epoch.as_ref().unwrap().1;
        Ok(batches[((step - 1) % per_epoch) as usize].clone())
    }

    /// Forward, backward, Adam and EMA for the next step.
    pub fn train_step(&mut self) -> Result<StepRecord, TrainError> {
        let step = self.step + 1;
        let batch = self.batch_for(step)?;
        let mut tape = Tape::new();
        let bound = self.model.params.bind(&mut tape);
        let loss = self.model.loss(&mut tape, &bound, &batch, Some(&mut self.rng))?;
        let loss_value = tape.value(loss).item()?;
        if !loss_value.is_finite() {
            return Err(TrainError::NonFiniteLoss(step));
        }
        tape.backward(loss)?;
        let grads = bound.grads(&tape);
        drop(tape);
        let lr = lr_schedule(step, &self.config.optim);
        adam_step(&mut self.model.params, &grads, &mut self.adam, &self.config.optim, lr)?;
        self.ema.update(&self.model.params);
        self.step = step;
        Ok(StepRecord {
            step,
            loss: loss_value,
            lr,
            dev_em: None,
            dev_f1: None,
        })
    }

    /// Trains until `config.optim.total_steps`, appending JSON lines to `log`
    /// and writing `checkpoint-<step>.bin` plus a final `checkpoint.bin` into
    /// `out_dir` when given.
    pub fn run(
        &mut self,
        log: &mut dyn Write,
        out_dir: Option<&Path>,
    ) -> Result<Vec<StepRecord>, TrainError> {
        let total = self.config.optim.total_steps;
        let tc = self.config.train.clone();
        let mut records = Vec::new();
        while self.step < total {
            let mut rec = self.train_step()?;
            let last = self.step == total;
            let due = |every: u64| every > 0 && self.step.is_multiple_of(every);
            if !self.dev.is_empty() && (due(tc.eval_every) || last) {
                let r = self.evaluate(&self.dev, true)?;
                rec.dev_em = Some(r.exact_match);
                rec.dev_f1 = Some(r.f1);
            }
            if due(tc.log_every.max(1)) || last || rec.dev_em.is_some() {
                let line = serde_json::to_string(&rec).expect("record serializes");
                writeln!(log, "{line}").map_err(|e| TrainError::io(Path::new("<log>"), e))?;
            }
            if let Some(dir) = out_dir {
                if due(tc.checkpoint_every) {
                    self.checkpoint()
                        .write(dir.join(format!("checkpoint-{}.bin", self.step)))?;
                }
            }
            records.push(rec);
        }
        if let Some(dir) = out_dir {
            self.checkpoint().write(dir.join("checkpoint.bin"))?;
        }
        Ok(records)
    }

    /// Model with the EMA shadow weights swapped in.
    pub fn ema_model(&self) -> QaNet {
        let mut m = self.model.clone();
        m.params = self.ema.apply(&self.model.params);
        m
    }

    /// EM/F1 on `examples`, using the EMA weights when `use_ema`.
    pub fn evaluate(&self, examples: &[QaExample], use_ema: bool) -> Result<EvalResult, TrainError> {
        let ema;
        let model = if use_ema {
            ema = self.ema_model();
            &ema
        } else {
            &self.model
        };
        let preds = predict_answers(
            model,
            &self.featurizer,
            examples,
            self.config.train.eval_batch_size,
        )?;
        Ok(evaluate(&preds, &golds_of(examples))?)
    }
}

/// Rebuilds a model from a checkpoint; `use_ema` loads the shadow weights in
/// place of the raw parameters.
pub fn model_from_checkpoint(
    ckpt: &Checkpoint,
    use_ema: bool,
) -> Result<(QaNet, Featurizer), TrainError> {
    let config = &ckpt.config;
    let table = ckpt
        .tensor("param/embedding.word_table")
        .ok_or_else(|| ModelError::MissingTensor("param/embedding.word_table".into()))?
        .clone();
    let mut model = QaNet::new(config.model.clone(), table, ckpt.chars.len(), config.seed)?;
    let names: Vec<(String, bool)> = model
        .params
        .iter()
        .map(|(_, p)| (p.name.clone(), p.trainable))
        .collect();
    let mut values = Vec::with_capacity(names.len());
    for (name, trainable) in &names {
        let key = if use_ema && *trainable {
            format!("ema/{name}")
        } else {
            format!("param/{name}")
        };
        let t = ckpt
            .tensor(&key)
            .ok_or_else(|| ModelError::MissingTensor(key.clone()))?;
        values.push((name.as_str(), t));
    }
    model.load_params(values)?;
    let featurizer = Featurizer::new(ckpt.words.clone(), ckpt.chars.clone(), config.data.max_context);
    Ok((model, featurizer))
}

/// Best-span answer text per example id.
pub fn predict_answers(
    model: &QaNet,
    featurizer: &Featurizer,
    examples: &[QaExample],
    batch_size: usize,
) -> Result<BTreeMap<String, String>, TrainError> {
    let mut out = BTreeMap::new();
    for batch in sequential_batches(examples, featurizer, batch_size) {
        let spans = model.predict(&batch)?;
        for (&i, span) in batch.indices.iter().zip(spans) {
            let ex = &examples[i];
            let answer = if ex.context_tokens.is_empty() {
                String::new()
            } else {
                ex.span_text(span.start, span.end)
            };
            out.insert(ex.id.clone(), answer);
        }
    }
    Ok(out)
}
