//! Exact-match and token-F1 scoring, compatible with the public SQuAD metric.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::QaExample;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no prediction for id {0}")]
    MissingPrediction(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed prediction file: {0}")]
    MalformedJson(String),
}

static ARTICLES: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b(a|an|the)\b").unwrap());

/// Lowercase, drop ASCII punctuation, drop articles, collapse whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lower = s.to_lowercase();
    let no_punc: String = lower.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    let no_articles = ARTICLES.replace_all(&no_punc, " ");
    no_articles.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn exact_match(prediction: &str, gold: &str) -> bool {
    normalize_answer(prediction) == normalize_answer(gold)
}

/// Harmonic mean of token-multiset precision and recall after normalization.
pub fn f1_score(prediction: &str, gold: &str) -> f64 {
    let pred = normalize_answer(prediction);
    let gold = normalize_answer(gold);
    let pred: Vec<&str> = pred.split_whitespace().collect();
    let gold: Vec<&str> = gold.split_whitespace().collect();
    if pred.is_empty() || gold.is_empty() {
        return if pred.is_empty() && gold.is_empty() { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, isize> = HashMap::new();
    for t in &gold {
        *counts.entry(t).or_insert(0) += 1;
    }
    let mut same = 0usize;
    for t in &pred {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                same += 1;
            }
        }
    }
    if same == 0 {
        return 0.0;
    }
    let precision = same as f64 / pred.len() as f64;
    let recall = same as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleScore {
    pub id: String,
    pub em: f64,
    pub f1: f64,
    pub prediction: String,
    pub golds: Vec<String>,
}

/// Aggregate scores in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub exact_match: f64,
    pub f1: f64,
    pub total: usize,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub records: Vec<ExampleScore>,
}

/// Scores every gold id; each example takes the best score over its golds.
pub fn evaluate(
    predictions: &BTreeMap<String, String>,
    golds: &[(String, Vec<String>)],
) -> Result<EvalResult, EvalError> {
    let mut records = Vec::with_capacity(golds.len());
    for (id, answers) in golds {
        let pred = predictions
            .get(id)
            .ok_or_else(|| EvalError::MissingPrediction(id.clone()))?;
        let em = answers
            .iter()
            .map(|g| if exact_match(pred, g) { 1.0 } else { 0.0 })
            .fold(0.0, f64::max);
        let f1 = answers.iter().map(|g| f1_score(pred, g)).fold(0.0, f64::max);
        records.push(ExampleScore {
            id: id.clone(),
            em,
            f1,
            prediction: pred.clone(),
            golds: answers.clone(),
        });
    }
    let total = records.len();
    let mean = |f: fn(&ExampleScore) -> f64| {
        if total == 0 {
            0.0
        } else {
            100.0 * records.iter().map(f).sum::<f64>() / total as f64
        }
    };
    Ok(EvalResult {
        exact_match: mean(|r| r.em),
        f1: mean(|r| r.f1),
        total,
        records,
    })
}

pub fn golds_of(examples: &[QaExample]) -> Vec<(String, Vec<String>)> {
    examples
        .iter()
        .map(|e| (e.id.clone(), e.gold_answers.clone()))
        .collect()
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>, EvalError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| EvalError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| EvalError::MalformedJson(e.to_string()))
}

pub fn write_predictions(
    path: impl AsRef<Path>,
    predictions: &BTreeMap<String, String>,
) -> Result<(), EvalError> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(predictions)
        .map_err(|e| EvalError::MalformedJson(e.to_string()))?;
    fs::write(path, text).map_err(|e| EvalError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}
