use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::squad::QaExample;
use super::DataError;
use crate::tensor::Tensor;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<PAD>";
pub const UNK_TOKEN: &str = "<UNK>";

/// Bijective token ↔ index map with `PAD = 0` and `UNK = 1` reserved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl From<Vec<String>> for Vocabulary {
    fn from(words: Vec<String>) -> Self {
        let mut v = Self::new();
        for w in words.into_iter().skip(2) {
            v.insert(&w);
        }
        v
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.words
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let words = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        let index = words.iter().cloned().zip(0..).collect();
        Self { words, index }
    }

    /// Index of `word`, inserting it when absent.
    pub fn insert(&mut self, word: &str) -> usize {
        if let Some(&i) = self.index.get(word) {
            return i;
        }
        self.words.push(word.to_string());
        self.index.insert(word.to_string(), self.words.len() - 1);
        self.words.len() - 1
    }

    pub fn lookup(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    /// Exact match, then lowercase, then `UNK`.
    pub fn id(&self, word: &str) -> usize {
        self.lookup(word)
            .or_else(|| self.lookup(&word.to_lowercase()))
            .unwrap_or(UNK)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

/// Loads whitespace-separated word vectors (`token v1 ... v_dim` per line).
///
/// Returns a `[V, dim]` table with `PAD` zeroed and `UNK` drawn from
/// `U(-0.1, 0.1)` using `seed`.
pub fn load_word_vectors(
    path: impl AsRef<Path>,
    dim: usize,
    seed: u64,
) -> Result<(Vocabulary, Tensor), DataError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    parse_word_vectors(&text, dim, seed)
}

pub fn parse_word_vectors(
    text: &str,
    dim: usize,
    seed: u64,
) -> Result<(Vocabulary, Tensor), DataError> {
    let mut vocab = Vocabulary::new();
    let mut rows: Vec<f64> = vec![0.0; 2 * dim];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in &mut rows[dim..] {
        *v = rng.random_range(-0.1..0.1);
    }
    for (line_no, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l)) {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let token = fields.next().ok_or(DataError::BadVectorLine(line_no))?;
        let values = fields
            .map(str::parse::<f64>)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| DataError::BadVectorLine(line_no))?;
        if values.len() != dim {
            return Err(DataError::DimensionMismatch {
                line: line_no,
                expected: dim,
                found: values.len(),
            });
        }
        if vocab.lookup(token).is_some() {
            continue;
        }
        vocab.insert(token);
        rows.extend(values);
    }
    let table = Tensor::new([vocab.len(), dim], rows).expect("rows match vocabulary");
    Ok((vocab, table))
}

/// Word vocabulary built from example tokens, for runs without pretrained vectors.
pub fn vocab_from_examples(examples: &[QaExample], min_count: usize) -> Vocabulary {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut order = Vec::new();
    for ex in examples {
        for w in ex.context_tokens.iter().chain(&ex.question_tokens) {
            let c = counts.entry(w.as_str()).or_insert(0);
            if *c == 0 {
                order.push(w.as_str());
            }
            *c += 1;
        }
    }
    let mut vocab = Vocabulary::new();
    for w in order {
        if counts[w] >= min_count {
            vocab.insert(w);
        }
    }
    vocab
}

/// Character vocabulary over every context and question character.
pub fn char_vocab_from_examples(examples: &[QaExample]) -> Vocabulary {
    let mut vocab = Vocabulary::new();
    for ex in examples {
        for w in ex.context_tokens.iter().chain(&ex.question_tokens) {
            for c in w.chars() {
                vocab.insert(c.encode_utf8(&mut [0; 4]));
            }
        }
    }
    vocab
}

/// Seeded `U(-0.5, 0.5)` vectors for every word (PAD row zero).
pub fn random_word_vectors(vocab: &Vocabulary, dim: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn([vocab.len(), dim], |i| {
        if i < dim {
            0.0
        } else {
            rng.random_range(-0.5..0.5)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(dim: usize) -> String {
        let row = |base: f64| {
            (0..dim)
                .map(|i| format!("{}", base + i as f64 * 0.001))
                .collect::<Vec<_>>()
                .join(" ")
        };
        format!("cat {}\ndog {}\n", row(0.1), row(-0.2))
    }

    #[test]
    fn loads_fixture_with_reserved_rows() {
        let (vocab, table) = parse_word_vectors(&fixture(300), 300, 7).unwrap();
        assert_eq!(vocab.len(), 4);
        assert_eq!(table.shape(), &[4, 300]);
        assert!(table.data()[..300].iter().all(|&v| v == 0.0));
        assert!(table.data()[300..600].iter().any(|&v| v != 0.0));
        assert_eq!(vocab.id("cat"), 2);
        assert_eq!(vocab.id("Cat"), 2);
        assert_eq!(vocab.id("zebra"), UNK);
        assert!((table.get(&[3, 1]) - (-0.199)).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_lines() {
        assert_eq!(
            parse_word_vectors("cat 1 2 x\n", 3, 0).unwrap_err(),
            DataError::BadVectorLine(1)
        );
        assert!(matches!(
            parse_word_vectors("cat 1 2 3\ndog 1 2\n", 3, 0),
            Err(DataError::DimensionMismatch { line: 2, .. })
        ));
    }

    #[test]
    fn vocabulary_is_bijective_and_reserved() {
        let mut v = Vocabulary::new();
        assert_eq!(v.insert("a"), 2);
        assert_eq!(v.insert("b"), 3);
        assert_eq!(v.insert("a"), 2);
        for (i, w) in v.words().iter().enumerate() {
            assert_eq!(v.lookup(w), Some(i));
        }
        assert_eq!(v.word(PAD), Some(PAD_TOKEN));
        assert_eq!(v.word(UNK), Some(UNK_TOKEN));
        let round: Vocabulary = Vec::<String>::from(v.clone()).into();
        assert_eq!(round, v);
    }
}
