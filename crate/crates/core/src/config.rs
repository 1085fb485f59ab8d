//! Run configuration stored as flat JSON with dotted keys
//! (`{"model.hidden": 128, "optim.beta1": 0.8, ...}`).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::ModelConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed config: {0}")]
    Json(String),
    #[error("unknown config key \"{0}\"")]
    UnknownKey(String),
    #[error("override \"{0}\" is not of the form key=value")]
    BadOverride(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
    pub warmup_steps: u64,
    pub weight_decay: f64,
    pub ema_decay: f64,
    pub batch_size: usize,
    pub total_steps: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            beta1: 0.8,
            beta2: 0.999,
            epsilon: 1e-7,
            learning_rate: 0.001,
            warmup_steps: 1000,
            weight_decay: 3e-7,
            ema_decay: 0.9999,
            batch_size: 32,
            total_steps: 150_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Steps between checkpoint writes; 0 writes only the final one.
    pub checkpoint_every: u64,
    pub log_every: u64,
    /// Steps between dev evaluations; 0 evaluates only at the end.
    pub eval_every: u64,
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            checkpoint_every: 1000,
            log_every: 1,
            eval_every: 0,
            eval_batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub train: Option<String>,
    pub dev: Option<String>,
    /// Pretrained vectors; without them every word gets a seeded random vector.
    pub word_vectors: Option<String>,
    /// Back-translated datasets mixed into training with `augment.mix_ratio`.
    pub augmented: Vec<String>,
    pub max_context: usize,
    pub max_answer: usize,
    pub min_word_count: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train: None,
            dev: None,
            word_vectors: None,
            augmented: Vec::new(),
            max_context: 400,
            max_answer: 30,
            min_word_count: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub beam: usize,
    pub threshold: f64,
    /// Sampling weights of the original, French and German pools.
    pub mix_ratio: [f64; 3],
    pub translator_url: Option<String>,
    pub timeout_secs: u64,
    pub retries: u32,
    pub concurrency: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            beam: 5,
            threshold: 0.5,
            mix_ratio: [3.0, 1.0, 1.0],
            translator_url: None,
            timeout_secs: 30,
            retries: 3,
            concurrency: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub optim: OptimizerConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub augment: AugmentConfig,
    pub seed: u64,
}

fn flatten_into(prefix: &str, value: &Value, out: &mut BTreeMap<String, Value>) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten_into(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.clone());
        }
    }
}

fn unflatten(flat: &BTreeMap<String, Value>) -> Value {
    let mut root = Map::new();
    for (key, value) in flat {
        let mut node = &mut root;
        let mut parts = key.split('.').peekable();
        while let Some(part) = parts.next() {
            if parts.peek().is_none() {
                node.insert(part.to_string(), value.clone());
            } else {
                node = node
                    .entry(part)
                    .or_insert_with(|| Value::Object(Map::new()))
                    .as_object_mut()
                    .expect("config keys never nest under scalars");
            }
        }
    }
    Value::Object(root)
}

impl RunConfig {
    /// Dotted-key view of every field.
    pub fn to_flat(&self) -> BTreeMap<String, Value> {
        let mut out = BTreeMap::new();
        flatten_into("", &serde_json::to_value(self).expect("config serializes"), &mut out);
        out
    }

    pub fn to_flat_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_flat()).expect("config serializes")
    }

    /// Defaults overlaid with `flat`. Nested objects are accepted and
    /// flattened; keys that name no field are rejected.
    pub fn from_flat(flat: &Value) -> Result<Self, ConfigError> {
        let mut given = BTreeMap::new();
        flatten_into("", flat, &mut given);
        Self::default().with_values(given)
    }

    fn with_values(&self, values: BTreeMap<String, Value>) -> Result<Self, ConfigError> {
        let mut merged = self.to_flat();
        for (key, value) in values {
            match merged.get_mut(&key) {
                Some(slot) => *slot = value,
                None => return Err(ConfigError::UnknownKey(key)),
            }
        }
        let cfg: RunConfig = serde_json::from_value(unflatten(&merged))
            .map_err(|e| ConfigError::Json(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let value: Value = serde_json::from_str(&text).map_err(|e| ConfigError::Json(e.to_string()))?;
        Self::from_flat(&value)
    }

    /// Applies `key=value` overrides. Values parse as JSON, falling back to a
    /// plain string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self, ConfigError> {
        let mut values = BTreeMap::new();
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| ConfigError::BadOverride(o.to_string()))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            values.insert(key.trim().to_string(), value);
        }
        self.with_values(values)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let o = &self.optim;
        let in_unit = |b: f64| b > 0.0 && b < 1.0;
        if !in_unit(o.beta1) || !in_unit(o.beta2) || !in_unit(o.ema_decay) {
            return Err(ConfigError::Invalid("beta1, beta2 and ema_decay must lie in (0, 1)".into()));
        }
        if o.epsilon <= 0.0 || o.learning_rate <= 0.0 || o.weight_decay < 0.0 || o.batch_size == 0 {
            return Err(ConfigError::Invalid(
                "epsilon, learning_rate and batch_size must be positive".into(),
            ));
        }
        let a = &self.augment;
        if a.mix_ratio.iter().any(|&w| w < 0.0) || a.mix_ratio.iter().all(|&w| w == 0.0) {
            return Err(ConfigError::Invalid("mix_ratio must be non-negative and not all zero".into()));
        }
        if self.data.augmented.len() > 2 {
            return Err(ConfigError::Invalid("at most two augmented datasets".into()));
        }
        if a.beam == 0 {
            return Err(ConfigError::Invalid("beam must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical flat JSON, hex encoded.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(&self.to_flat()).expect("config serializes");
        Sha256::digest(canonical.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
