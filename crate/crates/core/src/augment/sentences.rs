//! Rule-based sentence splitting with exact character offsets.

/// Words that end in a period without ending a sentence.
const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "mt", "vs", "etc", "inc", "ltd", "co",
    "corp", "no", "fig", "gen", "gov", "sen", "rep", "rev", "capt", "col", "lt", "sgt", "jan",
    "feb", "mar", "apr", "jun", "jul", "aug", "sep", "sept", "oct", "nov", "dec", "e.g", "i.e",
    "u.s", "u.k", "a.m", "p.m", "approx", "dept", "est", "vol",
];

const CLOSERS: &[char] = &['"', '\'', ')', ']', '\u{201d}', '\u{2019}'];
const OPENERS: &[char] = &['"', '\'', '(', '[', '\u{201c}', '\u{2018}'];

/// A sentence and its `[start, end)` character offsets in the paragraph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

fn is_abbreviation(chars: &[char], dot: usize) -> bool {
    let mut i = dot;
    while i > 0 && !chars[i - 1].is_whitespace() && !OPENERS.contains(&chars[i - 1]) {
        i -= 1;
    }
    let word: String = chars[i..dot].iter().collect::<String>().to_lowercase();
    if word.chars().count() == 1 && word.chars().all(char::is_alphabetic) {
        return true;
    }
    ABBREVIATIONS.contains(&word.as_str())
}

/// Splits after `.`, `!` or `?` (plus any closing quotes or brackets) when
/// whitespace follows and the next word starts with an uppercase letter, a
/// digit or an opening quote. Separators between sentences are the whitespace
/// runs left out of every [`Sentence`].
pub fn split_sentences(paragraph: &str) -> Vec<Sentence> {
    let chars: Vec<char> = paragraph.chars().collect();
    let n = chars.len();
    let mut out = Vec::new();
    let mut start = chars.iter().position(|c| !c.is_whitespace()).unwrap_or(n);
    let mut i = start;
    while i < n {
        let c = chars[i];
        if matches!(c, '.' | '!' | '?') {
            let mut end = i + 1;
            while end < n && (CLOSERS.contains(&chars[end]) || matches!(chars[end], '.' | '!' | '?')) {
                end += 1;
            }
            let mut next = end;
            while next < n && chars[next].is_whitespace() {
                next += 1;
            }
            let boundary = next > end
                && next < n
                && (chars[next].is_uppercase()
                    || chars[next].is_ascii_digit()
                    || OPENERS.contains(&chars[next]))
                && !(c == '.' && is_abbreviation(&chars, i));
            if boundary {
                out.push(Sentence {
                    text: chars[start..end].iter().collect(),
                    start,
                    end,
                });
                start = next;
                i = next;
                continue;
            }
            i = end;
            continue;
        }
        i += 1;
    }
    let mut end = n;
    while end > start && chars[end - 1].is_whitespace() {
        end -= 1;
    }
    if end > start {
        out.push(Sentence {
            text: chars[start..end].iter().collect(),
            start,
            end,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn texts(p: &str) -> Vec<String> {
        split_sentences(p).into_iter().map(|s| s.text).collect()
    }

    fn rebuild(p: &str) -> String {
        let chars: Vec<char> = p.chars().collect();
        let mut out = String::new();
        let mut pos = 0;
        for s in split_sentences(p) {
            out.extend(&chars[pos..s.start]);
            out.push_str(&s.text);
            pos = s.end;
        }
        out.extend(&chars[pos..]);
        out
    }

    #[test]
    fn basic_rules() {
        assert_eq!(texts("A cat. A dog."), ["A cat.", "A dog."]);
        assert_eq!(texts("no terminal punctuation here"), ["no terminal punctuation here"]);
        assert_eq!(texts("Is it? Yes! \"Quoted.\" Done."), ["Is it?", "Yes!", "\"Quoted.\"", "Done."]);
        assert_eq!(texts("Mr. Smith met Dr. Jones. Then left."), ["Mr. Smith met Dr. Jones.", "Then left."]);
        assert_eq!(texts("J. R. R. Tolkien wrote it."), ["J. R. R. Tolkien wrote it."]);
        assert_eq!(texts("version 2.5 is out. it is lower."), ["version 2.5 is out. it is lower."]);
        assert!(texts("   ").is_empty());
    }

    #[test]
    fn offsets_are_exact() {
        let p = "  Der Hund. Über alles!  ";
        let chars: Vec<char> = p.chars().collect();
        for s in split_sentences(p) {
            assert_eq!(chars[s.start..s.end].iter().collect::<String>(), s.text);
        }
        assert_eq!(rebuild(p), p);
    }

    proptest! {
        #[test]
        fn reconstruction(p in "([A-Za-z]{1,6}[ .!?]{0,2}){0,20}") {
            prop_assert_eq!(rebuild(&p), p);
        }
    }
}
