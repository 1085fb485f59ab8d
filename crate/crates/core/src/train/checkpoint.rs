//! Checkpoint container: 8-byte magic, little-endian `u64` header length, a
//! JSON header, then every tensor as raw little-endian `f64` in header order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::TrainError;
use crate::config::RunConfig;
use crate::tensor::Tensor;
use crate::text::Vocabulary;

pub const MAGIC: &[u8; 8] = b"QANETCK\x01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub config: RunConfig,
    pub words: Vocabulary,
    pub chars: Vocabulary,
    /// Position of the dropout generator, so a resumed run continues the
    /// same random stream.
    pub rng_word_pos: u128,
    pub tensors: Vec<(String, Tensor)>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    step: u64,
    config_hash: String,
    config: Value,
    words: Vocabulary,
    chars: Vocabulary,
    rng_word_pos: String,
    tensors: Vec<TensorEntry>,
}

fn corrupt(path: &Path, msg: impl std::fmt::Display) -> TrainError {
    TrainError::Checkpoint(format!("{}: {msg}", path.display()))
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            version: FORMAT_VERSION,
            step: self.step,
            config_hash: self.config.hash(),
            config: serde_json::to_value(self.config.to_flat()).expect("config serializes"),
            words: self.words.clone(),
            chars: self.chars.clone(),
            rng_word_pos: self.rng_word_pos.to_string(),
            tensors: self
                .tensors
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    dtype: "f64".into(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let payload: usize = self.tensors.iter().map(|(_, t)| t.numel() * 8).sum();
        let mut out = Vec::with_capacity(16 + header.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Writes through a temporary file so a crash never leaves a torn checkpoint.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        let io = |e: std::io::Error| TrainError::io(path, e);
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(&self.to_bytes()).map_err(io)?;
        f.sync_all().map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, TrainError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| TrainError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|msg| corrupt(path, msg))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err("not a checkpoint file".into());
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes
            .get(16..16 + header_len)
            .ok_or("truncated header")?;
        let header: Header = serde_json::from_slice(body).map_err(|e| e.to_string())?;
        if header.version != FORMAT_VERSION {
            return Err(format!("unsupported version {}", header.version));
        }
        let config = RunConfig::from_flat(&header.config).map_err(|e| e.to_string())?;
        if config.hash() != header.config_hash {
            return Err("config hash mismatch".into());
        }
        let rng_word_pos = header
            .rng_word_pos
            .parse()
            .map_err(|_| "bad rng position".to_string())?;
        let mut offset = 16 + header_len;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            if entry.dtype != "f64" {
                return Err(format!("tensor {}: unsupported dtype {}", entry.name, entry.dtype));
            }
            let n: usize = entry.shape.iter().product();
            let raw = bytes
                .get(offset..offset + 8 * n)
                .ok_or_else(|| format!("tensor {} is truncated", entry.name))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            offset += 8 * n;
            let t = Tensor::new(entry.shape, data).map_err(|e| e.to_string())?;
            tensors.push((entry.name, t));
        }
        if offset != bytes.len() {
            return Err("trailing bytes after last tensor".into());
        }
        Ok(Self {
            step: header.step,
            config,
            words: header.words,
            chars: header.chars,
            rng_word_pos,
            tensors,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut words = Vocabulary::new();
        words.insert("hello");
        Checkpoint {
            step: 42,
            config: RunConfig::default(),
            words,
            chars: Vocabulary::new(),
            rng_word_pos: u128::MAX - 3,
            tensors: vec![
                ("a".into(), Tensor::new([2, 2], vec![1.0, -0.0, f64::MIN_POSITIVE, 3.5]).unwrap()),
                ("b".into(), Tensor::scalar(std::f64::consts::PI)),
            ],
        }
    }

    #[test]
    fn round_trips_bit_exactly() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.step, 42);
        assert_eq!(back.rng_word_pos, u128::MAX - 3);
        assert_eq!(back.tensor("b").unwrap().data()[0].to_bits(), std::f64::consts::PI.to_bits());
    }

    #[test]
    fn rejects_corruption() {
        let mut bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        bytes.push(0);
        assert!(Checkpoint::from_bytes(&bytes).is_err());
        assert!(Checkpoint::from_bytes(b"garbage!garbage!").is_err());
    }

    #[test]
    fn writes_to_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        sample().write(&path).unwrap();
        assert_eq!(Checkpoint::read(&path).unwrap(), sample());
    }
}
