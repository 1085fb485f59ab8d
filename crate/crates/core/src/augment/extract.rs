//! Answer re-extraction by character-bigram similarity.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

fn bigrams(s: &str) -> HashMap<(char, char), usize> {
    let chars: Vec<char> = s.chars().collect();
    let mut out = HashMap::new();
    for w in chars.windows(2) {
        *out.entry((w[0], w[1])).or_insert(0) += 1;
    }
    out
}

/// Dice coefficient over lowercased character-bigram multisets. Strings with
/// fewer than two characters score 1 on exact (case-insensitive) equality and
/// 0 otherwise.
pub fn char_2gram_score(a: &str, b: &str) -> f64 {
    let (a, b) = (a.to_lowercase(), b.to_lowercase());
    if a.chars().count() < 2 || b.chars().count() < 2 {
        return if a == b { 1.0 } else { 0.0 };
    }
    let (ba, bb) = (bigrams(&a), bigrams(&b));
    let total: usize = ba.values().sum::<usize>() + bb.values().sum::<usize>();
    let shared: usize = ba
        .iter()
        .map(|(k, &n)| n.min(bb.get(k).copied().unwrap_or(0)))
        .sum();
    2.0 * shared as f64 / total as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedAnswer {
    /// Inclusive word span in the paraphrase.
    pub start: usize,
    pub end: usize,
    pub text: String,
    pub score: f64,
}

fn argmax_positions(words: &[String], target: &str) -> Vec<usize> {
    let scores: Vec<f64> = words.iter().map(|w| char_2gram_score(w, target)).collect();
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..words.len()).filter(|&i| scores[i] == best).collect()
}

/// Finds the span of `paraphrase` most similar to `answer`.
///
/// Start candidates are the words scoring highest against the first answer
/// word, end candidates those scoring highest against the last. Among pairs
/// with `start <= end` the span whose text is most similar to the whole answer
/// wins (shorter, then leftmost, on ties). Spans under `threshold` yield `None`.
pub fn extract_answer(paraphrase: &[String], answer: &[String], threshold: f64) -> Option<ExtractedAnswer> {
    let (first, last) = (answer.first()?, answer.last()?);
    if paraphrase.is_empty() {
        return None;
    }
    let target = answer.join(" ");
    let starts = argmax_positions(paraphrase, first);
    let ends = argmax_positions(paraphrase, last);
    let mut best: Option<ExtractedAnswer> = None;
    for &s in &starts {
        for &e in ends.iter().filter(|&&e| e >= s) {
            let text = paraphrase[s..=e].join(" ");
            let score = char_2gram_score(&text, &target);
            let better = match &best {
                None => true,
                Some(b) => {
                    score > b.score
                        || (score == b.score
                            && (e - s < b.end - b.start || (e - s == b.end - b.start && s < b.start)))
                }
            };
            if better {
                best = Some(ExtractedAnswer {
                    start: s,
                    end: e,
                    text,
                    score,
                });
            }
        }
    }
    best.filter(|b| b.score >= threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::words;
    use proptest::prelude::*;

    #[test]
    fn dice_examples() {
        assert_eq!(char_2gram_score("night", "night"), 1.0);
        assert_eq!(char_2gram_score("night", "nacht"), 0.25);
        assert_eq!(char_2gram_score("abc", "xyz"), 0.0);
        assert_eq!(char_2gram_score("a", "A"), 1.0);
        assert_eq!(char_2gram_score("a", "ab"), 0.0);
    }

    #[test]
    fn table_one_sentence() {
        let s = words("All departments in the College of Science offer PHD programs with the exception of the Department of Preparatory Studies .");
        let a = words("Department of Pre-Professional Studies");
        let got = extract_answer(&s, &a, DEFAULT_THRESHOLD).unwrap();
        assert_eq!(got.text, "Department of Preparatory Studies");
    }

    #[test]
    fn verbatim_and_disjoint() {
        let s = words("the river flows past the old mill today");
        let got = extract_answer(&s, &words("old mill"), 0.5).unwrap();
        assert_eq!((got.start, got.end, got.score), (5, 6, 1.0));
        assert!(extract_answer(&words("zzz qqq"), &words("old mill"), 0.5).is_none());
    }

    proptest! {
        #[test]
        fn verbatim_answers_are_recovered(
            pre in prop::collection::vec("[a-m]{2,6}", 0..6),
            ans in prop::collection::vec("[N-Z][n-z]{2,6}", 1..4),
            post in prop::collection::vec("[a-m]{2,6}", 0..6),
        ) {
            let sentence: Vec<String> = pre.iter().chain(&ans).chain(&post).cloned().collect();
            let got = extract_answer(&sentence, &ans, 0.5).unwrap();
            prop_assert_eq!(got.score, 1.0);
            prop_assert_eq!(got.text, ans.join(" "));
        }

        #[test]
        fn dice_is_symmetric_and_bounded(a in "\\PC{0,12}", b in "\\PC{0,12}") {
            let s = char_2gram_score(&a, &b);
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert_eq!(s, char_2gram_score(&b, &a));
        }
    }
}
