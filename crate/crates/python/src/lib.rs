use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use qanet_core::augment::{self, split_sentences as split};
use qanet_core::config::RunConfig;
use qanet_core::eval::{self, EvalResult};
use qanet_core::model::{dp_span_inference as dp, QaNet};
use qanet_core::text::{self, parse_qa_json, Featurizer, LengthLimits, QaExample, Split};
use qanet_core::train::{self, load_datasets, model_from_checkpoint, predict_answers, Checkpoint, Trainer};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// Tokens of `text` as `(token, start, end)` character offsets.
#[pyfunction]
fn tokenize(text: &str) -> Vec<(String, usize, usize)> {
    text::tokenize(text)
        .into_iter()
        .map(|t| (t.text, t.start, t.end))
        .collect()
}

/// Sentences of a paragraph as `(text, start, end)` character offsets.
#[pyfunction]
fn split_sentences(paragraph: &str) -> Vec<(String, usize, usize)> {
    split(paragraph)
        .into_iter()
        .map(|s| (s.text, s.start, s.end))
        .collect()
}

#[pyfunction]
fn normalize_answer(s: &str) -> String {
    eval::normalize_answer(s)
}

#[pyfunction]
fn exact_match(prediction: &str, gold: &str) -> bool {
    eval::exact_match(prediction, gold)
}

#[pyfunction]
fn f1_score(prediction: &str, gold: &str) -> f64 {
    eval::f1_score(prediction, gold)
}

/// Dice coefficient over lowercased character bigrams.
#[pyfunction]
fn char_2gram_score(a: &str, b: &str) -> f64 {
    augment::char_2gram_score(a, b)
}

/// Best answer span inside a paraphrased sentence as
/// `(start_word, end_word, text, score)`, or `None` below `threshold`.
#[pyfunction]
#[pyo3(signature = (paraphrase, answer, threshold = augment::DEFAULT_THRESHOLD))]
fn extract_answer(
    paraphrase: &str,
    answer: &str,
    threshold: f64,
) -> Option<(usize, usize, String, f64)> {
    augment::extract_answer(&text::words(paraphrase), &text::words(answer), threshold)
        .map(|a| (a.start, a.end, a.text, a.score))
}

/// `(start, end, score)` maximising `p1[s] * p2[e]` with `s <= e < s + max_len`.
#[pyfunction]
#[pyo3(signature = (p1, p2, max_len = 30))]
fn dp_span_inference(p1: Vec<f64>, p2: Vec<f64>, max_len: usize) -> PyResult<(usize, usize, f64)> {
    let s = dp(&p1, &p2, max_len).map_err(value_err)?;
    Ok((s.start, s.end, s.score))
}

/// Learning rate at a 1-based step under the default warmup schedule.
#[pyfunction]
#[pyo3(signature = (step, learning_rate = 0.001, warmup_steps = 1000))]
fn lr_schedule(step: u64, learning_rate: f64, warmup_steps: u64) -> f64 {
    let cfg = qanet_core::config::OptimizerConfig {
        learning_rate,
        warmup_steps,
        ..Default::default()
    };
    train::lr_schedule(step, &cfg)
}

fn result_dict<'py>(py: Python<'py>, r: &EvalResult, per_example: bool) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("exact_match", r.exact_match)?;
    d.set_item("f1", r.f1)?;
    d.set_item("total", r.total)?;
    if per_example {
        let rows: Vec<(String, f64, f64)> = r.records.iter().map(|x| (x.id.clone(), x.em, x.f1)).collect();
        d.set_item("records", rows)?;
    }
    Ok(d)
}

/// EM/F1 in percent. `golds` maps each id to its list of gold answers.
#[pyfunction]
#[pyo3(signature = (predictions, golds, per_example = false))]
fn evaluate<'py>(
    py: Python<'py>,
    predictions: BTreeMap<String, String>,
    golds: BTreeMap<String, Vec<String>>,
    per_example: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let golds: Vec<(String, Vec<String>)> = golds.into_iter().collect();
    let r = eval::evaluate(&predictions, &golds).map_err(value_err)?;
    result_dict(py, &r, per_example)
}

/// Resolved run configuration as flat dotted-key JSON.
#[pyfunction]
#[pyo3(signature = (overrides = Vec::new(), config_path = None))]
fn resolve_config(overrides: Vec<String>, config_path: Option<PathBuf>) -> PyResult<String> {
    Ok(load_config(config_path, &overrides)?.to_flat_json())
}

fn load_config(path: Option<PathBuf>, overrides: &[String]) -> PyResult<RunConfig> {
    let base = match path {
        Some(p) => RunConfig::load(p).map_err(value_err)?,
        None => RunConfig::default(),
    };
    base.with_overrides(overrides).map_err(value_err)
}

/// Trains until `optim.total_steps` and returns `(step, loss, lr)` per step.
/// Checkpoints and `log.jsonl` go to `out_dir` when given.
#[pyfunction]
#[pyo3(signature = (overrides = Vec::new(), config_path = None, out_dir = None))]
fn train_model(
    py: Python<'_>,
    overrides: Vec<String>,
    config_path: Option<PathBuf>,
    out_dir: Option<PathBuf>,
) -> PyResult<Vec<(u64, f64, f64)>> {
    let config = load_config(config_path, &overrides)?;
    py.allow_threads(|| {
        let (train, dev) = load_datasets(&config).map_err(value_err)?;
        let mut trainer = Trainer::new(config, train, dev).map_err(value_err)?;
        let mut log: Box<dyn std::io::Write> = match &out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(runtime_err)?;
                Box::new(std::fs::File::create(dir.join("log.jsonl")).map_err(runtime_err)?)
            }
            None => Box::new(std::io::sink()),
        };
        let records = trainer
            .run(log.as_mut(), out_dir.as_deref())
            .map_err(runtime_err)?;
        Ok(records.iter().map(|r| (r.step, r.loss, r.lr)).collect())
    })
}

/// A trained model loaded from a checkpoint.
#[pyclass(module = "qanet")]
struct Predictor {
    model: QaNet,
    featurizer: Featurizer,
    limits: LengthLimits,
    batch_size: usize,
    #[pyo3(get)]
    step: u64,
}

#[pymethods]
impl Predictor {
    #[new]
    #[pyo3(signature = (checkpoint, use_ema = true))]
    fn new(checkpoint: PathBuf, use_ema: bool) -> PyResult<Self> {
        let ckpt = Checkpoint::read(&checkpoint).map_err(value_err)?;
        let (model, featurizer) = model_from_checkpoint(&ckpt, use_ema).map_err(value_err)?;
        Ok(Self {
            model,
            featurizer,
            limits: LengthLimits {
                max_context: ckpt.config.data.max_context,
                max_answer: ckpt.config.data.max_answer,
            },
            batch_size: ckpt.config.train.eval_batch_size,
            step: ckpt.step,
        })
    }

    /// Answer text for one context/question pair.
    fn answer(&self, py: Python<'_>, context: &str, question: &str) -> PyResult<String> {
        // The label is unused here but must align, so anchor it on the first token.
        let first = text::tokenize(context)
            .into_iter()
            .next()
            .ok_or_else(|| value_err("context has no tokens"))?;
        let ex = QaExample::new("q", context, question, first.text, first.start, vec![])
            .map_err(value_err)?;
        let preds = py
            .allow_threads(|| predict_answers(&self.model, &self.featurizer, &[ex], 1))
            .map_err(runtime_err)?;
        Ok(preds.into_values().next().unwrap_or_default())
    }

    /// Id to answer text for every question in a SQuAD-format file.
    fn predict_file(&self, py: Python<'_>, path: PathBuf) -> PyResult<BTreeMap<String, String>> {
        let examples = parse_qa_json(&path, Split::Eval, self.limits).map_err(value_err)?;
        py.allow_threads(|| predict_answers(&self.model, &self.featurizer, &examples, self.batch_size))
            .map_err(runtime_err)
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.model
            .params
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(_, p)| p.value.numel())
            .sum()
    }

    fn __repr__(&self) -> String {
        format!(
            "Predictor(step={}, hidden={}, parameters={})",
            self.step,
            self.model.config.hidden,
            self.num_parameters()
        )
    }
}

#[pymodule]
pub fn qanet(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(split_sentences, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_answer, m)?)?;
    m.add_function(wrap_pyfunction!(exact_match, m)?)?;
    m.add_function(wrap_pyfunction!(f1_score, m)?)?;
    m.add_function(wrap_pyfunction!(char_2gram_score, m)?)?;
    m.add_function(wrap_pyfunction!(extract_answer, m)?)?;
    m.add_function(wrap_pyfunction!(dp_span_inference, m)?)?;
    m.add_function(wrap_pyfunction!(lr_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(resolve_config, m)?)?;
    m.add_function(wrap_pyfunction!(train_model, m)?)?;
    m.add_class::<Predictor>()?;
    Ok(())
}
