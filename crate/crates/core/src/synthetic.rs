//! Seeded toy reading-comprehension data.
//!
//! Every context holds one marker word exactly once; the question names the
//! marker and the answer is the 1 to 3 words right after it.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::text::QaExample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub examples: usize,
    /// Distinct words, including the question cue.
    pub vocab: usize,
    pub min_context: usize,
    pub max_context: usize,
    pub max_answer: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            examples: 50,
            vocab: 200,
            min_context: 8,
            max_context: 30,
            max_answer: 3,
            seed: 0,
        }
    }
}

pub fn word(i: usize) -> String {
    format!("w{i}")
}

pub fn generate(cfg: &SyntheticConfig) -> Vec<QaExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pool: Vec<usize> = (1..cfg.vocab.max(3)).collect();
    let max_answer = cfg.max_answer.max(1);
    let max_context = cfg.max_context.max(max_answer + 1);
    let min_context = cfg.min_context.clamp(max_answer + 1, max_context);
    (0..cfg.examples)
        .map(|i| {
            let len = rng.random_range(min_context..=max_context);
            let answer_len = rng.random_range(1..=max_answer);
            let key_pos = rng.random_range(0..len - answer_len);
            let key = *pool.choose(&mut rng).unwrap();
            let fillers: Vec<usize> = pool.iter().copied().filter(|&w| w != key).collect();
            let tokens: Vec<String> = (0..len)
                .map(|p| {
                    if p == key_pos {
                        word(key)
                    } else {
                        word(*fillers.choose(&mut rng).unwrap())
                    }
                })
                .collect();
            let answer_start: usize = tokens[..=key_pos].iter().map(|t| t.len() + 1).sum();
            let answer = tokens[key_pos + 1..key_pos + 1 + answer_len].join(" ");
            let question = format!("{} {}", word(0), word(key));
            QaExample::new(
                format!("syn-{i}"),
                tokens.join(" "),
                question,
                answer,
                answer_start,
                vec![],
            )
            .expect("synthetic answers are aligned by construction")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn respects_limits_and_aligns_answers() {
        let cfg = SyntheticConfig::default();
        let exs = generate(&cfg);
        assert_eq!(exs.len(), 50);
        let mut vocab = BTreeSet::new();
        for ex in &exs {
            assert!(ex.context_tokens.len() <= 30);
            let (s, e) = ex.answer_span;
            assert_eq!(ex.context_tokens[s..=e].join(" "), ex.answer_text);
            let key = &ex.question_tokens[1];
            assert_eq!(ex.context_tokens.iter().filter(|t| *t == key).count(), 1);
            assert_eq!(&ex.context_tokens[s - 1], key);
            vocab.extend(ex.context_tokens.iter().chain(&ex.question_tokens).cloned());
        }
        assert!(vocab.len() <= 200);
    }

    #[test]
    fn seeded() {
        let cfg = SyntheticConfig::default();
        assert_eq!(generate(&cfg), generate(&cfg));
    }
}
