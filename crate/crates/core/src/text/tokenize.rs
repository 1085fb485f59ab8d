//! Rule tokenizer: whitespace split, then leading/trailing punctuation peeled
//! off one character at a time. Inner punctuation (hyphens, apostrophes,
//! decimal points) stays inside the word.

use serde::{Deserialize, Serialize};

/// A token with its `[start, end)` offsets in characters (Unicode scalar values).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        split_chunk(&chars, start, i, &mut tokens);
    }
    tokens
}

fn split_chunk(chars: &[char], mut start: usize, mut end: usize, out: &mut Vec<Token>) {
    let make = |s: usize, e: usize| Token {
        text: chars[s..e].iter().collect(),
        start: s,
        end: e,
    };
    while start < end && is_punct(chars[start]) {
        out.push(make(start, start + 1));
        start += 1;
    }
    let mut trailing = Vec::new();
    while end > start && is_punct(chars[end - 1]) {
        trailing.push(make(end - 1, end));
        end -= 1;
    }
    if start < end {
        out.push(make(start, end));
    }
    out.extend(trailing.into_iter().rev());
}

/// Convenience: token strings only.
pub fn words(text: &str) -> Vec<String> {
    tokenize(text).into_iter().map(|t| t.text).collect()
}

/// Characters `[start, end)` of `text`.
pub fn char_slice(text: &str, start: usize, end: usize) -> String {
    text.chars().skip(start).take(end.saturating_sub(start)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn splits_punctuation() {
        assert_eq!(words("Hello, world."), ["Hello", ",", "world", "."]);
    }

    #[test]
    fn empty_input() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("   \n\t").is_empty());
    }

    #[test]
    fn keeps_hyphenated_words_whole() {
        assert_eq!(
            words("the Department of Pre-Professional Studies."),
            ["the", "Department", "of", "Pre-Professional", "Studies", "."]
        );
        assert_eq!(words("(don't)"), ["(", "don't", ")"]);
        assert_eq!(words("3.14 ..."), ["3.14", ".", ".", "."]);
    }

    #[test]
    fn offsets_are_character_based() {
        let toks = tokenize("café au lait");
        assert_eq!((toks[1].start, toks[1].end), (5, 7));
        assert_eq!(char_slice("café au lait", 5, 7), "au");
    }

    proptest! {
        #[test]
        fn offsets_round_trip(text in "[ -~\t\n]{0,64}") {
            let toks = tokenize(&text);
            let mut last_end = 0;
            for t in &toks {
                prop_assert_eq!(&text[t.start..t.end], t.text.as_str());
                prop_assert!(t.start >= last_end);
                prop_assert!(!t.text.chars().any(char::is_whitespace));
                last_end = t.end;
            }
        }
    }
}
