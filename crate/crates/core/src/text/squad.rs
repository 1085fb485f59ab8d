//! Reading and writing datasets in the SQuAD v1.1 JSON layout.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::tokenize::{char_slice, tokenize, words};
use super::DataError;

/// Training-time length limits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthLimits {
    pub max_context: usize,
    pub max_answer: usize,
}

impl Default for LengthLimits {
    fn default() -> Self {
        Self {
            max_context: 400,
            max_answer: 30,
        }
    }
}

/// Training examples are filtered by [`LengthLimits`]; evaluation examples are
/// kept whole and truncated only when batched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

/// One (document, question, answer) triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaExample {
    pub id: String,
    pub context: String,
    pub context_tokens: Vec<String>,
    /// `[start, end)` character offsets of each context token.
    pub char_offsets: Vec<(usize, usize)>,
    pub question: String,
    pub question_tokens: Vec<String>,
    pub answer_text: String,
    /// Character offset of the labelled answer in `context`.
    pub answer_start: usize,
    /// Inclusive token span of the labelled answer.
    pub answer_span: (usize, usize),
    /// Every gold answer text (the label is the first).
    pub gold_answers: Vec<String>,
}

impl QaExample {
    /// Tokenizes and aligns a raw example. The answer is snapped to the tokens
    /// overlapping its character range.
    pub fn new(
        id: impl Into<String>,
        context: impl Into<String>,
        question: impl Into<String>,
        answer_text: impl Into<String>,
        answer_start: usize,
        gold_answers: Vec<String>,
    ) -> Result<Self, DataError> {
        let (id, context, question, answer_text) =
            (id.into(), context.into(), question.into(), answer_text.into());
        let toks = tokenize(&context);
        let answer_end = answer_start + answer_text.chars().count();
        let overlapping: Vec<usize> = toks
            .iter()
            .enumerate()
            .filter(|(_, t)| t.start < answer_end.max(answer_start + 1) && t.end > answer_start)
            .map(|(i, _)| i)
            .collect();
        let (Some(&start), Some(&end)) = (overlapping.first(), overlapping.last()) else {
            return Err(DataError::UnalignableAnswer { id });
        };
        let gold_answers = if gold_answers.is_empty() {
            vec![answer_text.clone()]
        } else {
            gold_answers
        };
        Ok(Self {
            question_tokens: words(&question),
            context_tokens: toks.iter().map(|t| t.text.clone()).collect(),
            char_offsets: toks.iter().map(|t| (t.start, t.end)).collect(),
            id,
            context,
            question,
            answer_text,
            answer_start,
            answer_span: (start, end),
            gold_answers,
        })
    }

    /// Context text covered by an inclusive token span.
    pub fn span_text(&self, start: usize, end: usize) -> String {
        char_slice(&self.context, self.char_offsets[start].0, self.char_offsets[end].1)
    }

    pub fn answer_len(&self) -> usize {
        self.answer_span.1 - self.answer_span.0 + 1
    }

    /// Checks the span invariants: in range, and the covered text normalizes
    /// to the same string as the answer.
    pub fn validate(&self) -> Result<(), DataError> {
        let (s, e) = self.answer_span;
        let bad = || DataError::UnalignableAnswer {
            id: self.id.clone(),
        };
        if s > e || e >= self.context_tokens.len() {
            return Err(bad());
        }
        for (tok, &(a, b)) in self.context_tokens.iter().zip(&self.char_offsets) {
            if char_slice(&self.context, a, b) != *tok {
                return Err(bad());
            }
        }
        let covered = crate::eval::normalize_answer(&self.span_text(s, e));
        if covered != crate::eval::normalize_answer(&self.answer_text) {
            return Err(bad());
        }
        Ok(())
    }
}

fn field<'a>(v: &'a Value, key: &str, ctx: &str) -> Result<&'a Value, DataError> {
    v.get(key).ok_or_else(|| DataError::MissingField {
        field: key.to_string(),
        context: ctx.to_string(),
    })
}

fn str_field<'a>(v: &'a Value, key: &str, ctx: &str) -> Result<&'a str, DataError> {
    field(v, key, ctx)?
        .as_str()
        .ok_or_else(|| DataError::MalformedJson(format!("{ctx}: \"{key}\" is not a string")))
}

fn array_field<'a>(v: &'a Value, key: &str, ctx: &str) -> Result<&'a Vec<Value>, DataError> {
    field(v, key, ctx)?
        .as_array()
        .ok_or_else(|| DataError::MalformedJson(format!("{ctx}: \"{key}\" is not an array")))
}

pub fn parse_qa_json(
    path: impl AsRef<Path>,
    split: Split,
    limits: LengthLimits,
) -> Result<Vec<QaExample>, DataError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    parse_qa_str(&text, split, limits)
}

pub fn parse_qa_str(
    text: &str,
    split: Split,
    limits: LengthLimits,
) -> Result<Vec<QaExample>, DataError> {
    let root: Value =
        serde_json::from_str(text).map_err(|e| DataError::MalformedJson(e.to_string()))?;
    let mut out = Vec::new();
    for (ai, article) in array_field(&root, "data", "root")?.iter().enumerate() {
        let actx = format!("data[{ai}]");
        for (pi, para) in array_field(article, "paragraphs", &actx)?.iter().enumerate() {
            let pctx = format!("{actx}.paragraphs[{pi}]");
            let context = str_field(para, "context", &pctx)?;
            for qa in array_field(para, "qas", &pctx)? {
                let id = str_field(qa, "id", &pctx)?;
                let qctx = format!("qa {id}");
                let question = str_field(qa, "question", &qctx)?;
                let answers = array_field(qa, "answers", &qctx)?;
                let first = answers.first().ok_or_else(|| DataError::MissingField {
                    field: "answers[0]".into(),
                    context: qctx.clone(),
                })?;
                let answer_text = str_field(first, "text", &qctx)?;
                let answer_start = field(first, "answer_start", &qctx)?
                    .as_u64()
                    .ok_or_else(|| {
                        DataError::MalformedJson(format!("{qctx}: answer_start is not an integer"))
                    })? as usize;
                let golds = answers
                    .iter()
                    .map(|a| str_field(a, "text", &qctx).map(str::to_string))
                    .collect::<Result<Vec<_>, _>>()?;
                let ex = QaExample::new(id, context, question, answer_text, answer_start, golds)?;
                if split == Split::Train
                    && (ex.context_tokens.len() > limits.max_context
                        || ex.answer_len() > limits.max_answer)
                {
                    continue;
                }
                out.push(ex);
            }
        }
    }
    Ok(out)
}

/// Gold answers per id, without tokenization or alignment.
pub fn load_gold_answers(path: impl AsRef<Path>) -> Result<Vec<(String, Vec<String>)>, DataError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let root: Value =
        serde_json::from_str(&text).map_err(|e| DataError::MalformedJson(e.to_string()))?;
    let mut out = Vec::new();
    for article in array_field(&root, "data", "root")? {
        for para in array_field(article, "paragraphs", "article")? {
            for qa in array_field(para, "qas", "paragraph")? {
                let id = str_field(qa, "id", "paragraph")?.to_string();
                let golds = array_field(qa, "answers", &id)?
                    .iter()
                    .map(|a| str_field(a, "text", &id).map(str::to_string))
                    .collect::<Result<Vec<_>, _>>()?;
                out.push((id, golds));
            }
        }
    }
    Ok(out)
}

/// Serializes examples as a SQuAD v1.1 document, one paragraph per example.
pub fn to_squad_json(examples: &[QaExample], title: &str) -> Value {
    let paragraphs: Vec<Value> = examples
        .iter()
        .map(|ex| {
            let mut answers = vec![json!({"text": ex.answer_text, "answer_start": ex.answer_start})];
            answers.extend(
                ex.gold_answers
                    .iter()
                    .skip(1)
                    .map(|g| json!({"text": g, "answer_start": ex.answer_start})),
            );
            json!({
                "context": ex.context,
                "qas": [{"id": ex.id, "question": ex.question, "answers": answers}],
            })
        })
        .collect();
    json!({"version": "1.1", "data": [{"title": title, "paragraphs": paragraphs}]})
}

pub fn write_qa_json(
    path: impl AsRef<Path>,
    examples: &[QaExample],
    title: &str,
) -> Result<(), DataError> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(&to_squad_json(examples, title))
        .map_err(|e| DataError::MalformedJson(e.to_string()))?;
    fs::write(path, text).map_err(|e| DataError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(context: &str, answer: &str, start: usize) -> String {
        json!({"version": "1.1", "data": [{"title": "t", "paragraphs": [{
            "context": context,
            "qas": [{"id": "q1", "question": "what sat?",
                     "answers": [{"text": answer, "answer_start": start}]}]
        }]}]})
        .to_string()
    }

    #[test]
    fn maps_character_offsets_to_token_span() {
        let ex = parse_qa_str(&fixture("the cat sat", "cat", 4), Split::Train, LengthLimits::default())
            .unwrap();
        assert_eq!(ex.len(), 1);
        assert_eq!(ex[0].answer_span, (1, 1));
        assert_eq!(ex[0].question_tokens, ["what", "sat", "?"]);
        ex[0].validate().unwrap();
    }

    #[test]
    fn discards_long_contexts_only_for_training() {
        let context = vec!["w"; 401].join(" ");
        let text = fixture(&context, "w", 0);
        let limits = LengthLimits::default();
        assert!(parse_qa_str(&text, Split::Train, limits).unwrap().is_empty());
        assert_eq!(parse_qa_str(&text, Split::Eval, limits).unwrap().len(), 1);

        let context = vec!["w"; 400].join(" ");
        let text = fixture(&context, "w", 0);
        assert_eq!(parse_qa_str(&text, Split::Train, limits).unwrap().len(), 1);
    }

    #[test]
    fn discards_long_answers_for_training() {
        let context = vec!["w"; 40].join(" ");
        let answer = vec!["w"; 31].join(" ");
        let text = fixture(&context, &answer, 0);
        assert!(parse_qa_str(&text, Split::Train, LengthLimits::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn empty_answers_is_missing_field() {
        let text = json!({"data": [{"paragraphs": [{"context": "a b", "qas": [
            {"id": "x", "question": "q", "answers": []}]}]}]})
        .to_string();
        assert!(matches!(
            parse_qa_str(&text, Split::Train, LengthLimits::default()),
            Err(DataError::MissingField { .. })
        ));
    }

    #[test]
    fn malformed_and_missing_keys() {
        assert!(matches!(
            parse_qa_str("{", Split::Train, LengthLimits::default()),
            Err(DataError::MalformedJson(_))
        ));
        assert!(matches!(
            parse_qa_str("{\"version\": 1}", Split::Train, LengthLimits::default()),
            Err(DataError::MissingField { .. })
        ));
    }

    #[test]
    fn snaps_partial_tokens_and_rejects_uncovered_answers() {
        // answer starts mid-token: covering token is used
        let ex = QaExample::new("a", "the cats sat", "q", "at", 5, vec![]).unwrap();
        assert_eq!(ex.answer_span, (1, 1));
        // answer range lies entirely on whitespace
        let err = QaExample::new("b", "the   cat", "q", " ", 4, vec![]).unwrap_err();
        assert!(matches!(err, DataError::UnalignableAnswer { .. }));
    }

    #[test]
    fn round_trips_through_squad_json() {
        let ex = QaExample::new(
            "id-1",
            "Paris is the capital of France.",
            "What is the capital?",
            "Paris",
            0,
            vec!["Paris".into(), "paris".into()],
        )
        .unwrap();
        let text = to_squad_json(std::slice::from_ref(&ex), "t").to_string();
        let back = parse_qa_str(&text, Split::Eval, LengthLimits::default()).unwrap();
        assert_eq!(back, vec![ex]);
    }
}
