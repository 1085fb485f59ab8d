//! Sentence paraphrasing by round-trip translation and document rebuilding.

use std::thread;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::extract::{extract_answer, DEFAULT_THRESHOLD};
use super::sentences::split_sentences;
use super::translate::{Direction, Translator};
use super::AugmentError;
use crate::text::{char_slice, tokenize, words, QaExample};

#[derive(Debug, Clone, PartialEq)]
pub struct ParaphraseOptions {
    /// Beam width `k`; each sentence gets at most `k²` candidates.
    pub beam: usize,
    pub threshold: f64,
    /// Parallel translator requests.
    pub concurrency: usize,
    /// Give up on a document when its answer sentence has no surviving
    /// paraphrase instead of keeping that sentence verbatim.
    pub require_answer_paraphrase: bool,
}

impl Default for ParaphraseOptions {
    fn default() -> Self {
        Self {
            beam: 5,
            threshold: DEFAULT_THRESHOLD,
            concurrency: 1,
            require_answer_paraphrase: false,
        }
    }
}

fn round_trip(
    sentences: &[String],
    translator: &dyn Translator,
    beam: usize,
) -> Result<Vec<Vec<String>>, AugmentError> {
    if sentences.is_empty() {
        return Ok(Vec::new());
    }
    let forward = translator.translate(sentences, beam, Direction::Forward)?;
    let forward: Vec<Vec<String>> = forward.into_iter().map(|f| f.into_iter().take(beam).collect()).collect();
    let flat: Vec<String> = forward.iter().flatten().cloned().collect();
    let mut back = translator.translate(&flat, beam, Direction::Back)?.into_iter();
    let mut out = Vec::with_capacity(sentences.len());
    for (original, fwd) in sentences.iter().zip(&forward) {
        let mut seen: Vec<String> = Vec::new();
        for _ in fwd {
            for cand in back.next().unwrap_or_default().into_iter().take(beam) {
                let cand = cand.trim().to_string();
                if !cand.is_empty() && cand != original.trim() && !seen.contains(&cand) {
                    seen.push(cand);
                }
            }
        }
        out.push(seen);
    }
    Ok(out)
}

/// Up to `k²` distinct paraphrases of `sentence`, excluding the sentence itself.
pub fn paraphrase_sentence(
    sentence: &str,
    translator: &dyn Translator,
    beam: usize,
) -> Result<Vec<String>, AugmentError> {
    Ok(round_trip(&[sentence.to_string()], translator, beam)?.remove(0))
}

/// [`paraphrase_sentence`] for many sentences, split into at most
/// `concurrency` parallel request groups. Results keep input order.
pub fn paraphrase_sentences(
    sentences: &[String],
    translator: &dyn Translator,
    beam: usize,
    concurrency: usize,
) -> Result<Vec<Vec<String>>, AugmentError> {
    let groups = concurrency.clamp(1, sentences.len().max(1));
    if groups == 1 {
        return round_trip(sentences, translator, beam);
    }
    let chunk = sentences.len().div_ceil(groups);
    let results: Vec<Result<Vec<Vec<String>>, AugmentError>> = thread::scope(|s| {
        let handles: Vec<_> = sentences
            .chunks(chunk)
            .map(|c| s.spawn(move || round_trip(c, translator, beam)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("translator thread panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(sentences.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
struct AnswerChoice {
    sentence: String,
    /// Character offset and text of the realigned answer inside `sentence`.
    offset: usize,
    text: String,
}

/// Paraphrase candidates of one document, ready to be sampled repeatedly.
#[derive(Debug, Clone)]
pub struct DocumentParaphrases {
    example: QaExample,
    /// `(start, end)` character range of each unit in the original context.
    units: Vec<(usize, usize)>,
    answer_unit: usize,
    candidates: Vec<Vec<String>>,
    answer_choices: Vec<AnswerChoice>,
    require_answer: bool,
}

impl DocumentParaphrases {
    pub fn build(
        example: &QaExample,
        translator: &dyn Translator,
        opts: &ParaphraseOptions,
    ) -> Result<Self, AugmentError> {
        let answer_lo = example.char_offsets[example.answer_span.0].0;
        let answer_hi = example.char_offsets[example.answer_span.1].1;
        let mut units: Vec<(usize, usize)> = Vec::new();
        let mut answer_unit: Option<usize> = None;
        for s in split_sentences(&example.context) {
            let hits = s.start < answer_hi && s.end > answer_lo;
            match (hits, answer_unit) {
                (true, Some(u)) if u == units.len() - 1 => units[u].1 = s.end,
                (true, _) => {
                    answer_unit = Some(units.len());
                    units.push((s.start, s.end));
                }
                _ => units.push((s.start, s.end)),
            }
        }
        let answer_unit = answer_unit.ok_or_else(|| {
            AugmentError::Data(crate::text::DataError::UnalignableAnswer {
                id: example.id.clone(),
            })
        })?;
        let texts: Vec<String> = units
            .iter()
            .map(|&(a, b)| char_slice(&example.context, a, b))
            .collect();
        let candidates = paraphrase_sentences(&texts, translator, opts.beam, opts.concurrency)?;
        let answer_words = words(&example.answer_text);
        let answer_choices = candidates[answer_unit]
            .iter()
            .filter_map(|cand| {
                let toks = tokenize(cand);
                let tok_text: Vec<String> = toks.iter().map(|t| t.text.clone()).collect();
                let found = extract_answer(&tok_text, &answer_words, opts.threshold)?;
                let (lo, hi) = (toks[found.start].start, toks[found.end].end);
                Some(AnswerChoice {
                    sentence: cand.clone(),
                    offset: lo,
                    text: char_slice(cand, lo, hi),
                })
            })
            .collect();
        Ok(Self {
            example: example.clone(),
            units,
            answer_unit,
            candidates,
            answer_choices,
            require_answer: opts.require_answer_paraphrase,
        })
    }

    /// Number of paraphrase candidates per sentence unit.
    pub fn candidate_counts(&self) -> Vec<usize> {
        self.candidates.iter().map(Vec::len).collect()
    }

    /// Candidates of the answer sentence that keep a recognisable answer.
    pub fn surviving_answer_candidates(&self) -> usize {
        self.answer_choices.len()
    }

    /// Draws one rebuilt document. Each sentence is replaced by a uniformly
    /// chosen candidate; sentences without candidates stay as they are.
    pub fn sample(&self, id: &str, rng: &mut ChaCha8Rng) -> Result<Option<QaExample>, AugmentError> {
        let ex = &self.example;
        if self.answer_choices.is_empty() && self.require_answer {
            return Ok(None);
        }
        let chars: Vec<char> = ex.context.chars().collect();
        let mut context = String::new();
        let mut len = 0usize;
        let mut prev = 0usize;
        let mut answer = None;
        let push = |s: &str, context: &mut String, len: &mut usize| {
            context.push_str(s);
            *len += s.chars().count();
        };
        for (u, &(a, b)) in self.units.iter().enumerate() {
            let sep: String = chars[prev..a].iter().collect();
            push(&sep, &mut context, &mut len);
            let original: String = chars[a..b].iter().collect();
            if u == self.answer_unit {
                if self.answer_choices.is_empty() {
                    let lo = ex.char_offsets[ex.answer_span.0].0;
                    answer = Some((len + lo - a, ex.span_text(ex.answer_span.0, ex.answer_span.1)));
                    push(&original, &mut context, &mut len);
                } else {
                    let c = &self.answer_choices[rng.random_range(0..self.answer_choices.len())];
                    answer = Some((len + c.offset, c.text.clone()));
                    push(&c.sentence, &mut context, &mut len);
                }
            } else if self.candidates[u].is_empty() {
                push(&original, &mut context, &mut len);
            } else {
                let c = &self.candidates[u][rng.random_range(0..self.candidates[u].len())];
                push(c, &mut context, &mut len);
            }
            prev = b;
        }
        let tail: String = chars[prev..].iter().collect();
        context.push_str(&tail);
        let (start, text) = answer.expect("answer unit visited");
        let out = QaExample::new(id, context, ex.question.clone(), text, start, vec![])?;
        out.validate()?;
        Ok(Some(out))
    }
}

/// Builds candidates for `example` and draws one paraphrased document.
pub fn paraphrase_document(
    example: &QaExample,
    translator: &dyn Translator,
    opts: &ParaphraseOptions,
    rng: &mut ChaCha8Rng,
) -> Result<Option<QaExample>, AugmentError> {
    DocumentParaphrases::build(example, translator, opts)?.sample(&example.id, rng)
}

/// Paraphrases every example `copies` times through one pivot language.
/// Augmented ids are `{id}-{pivot}-{i}`.
pub fn augment_dataset(
    examples: &[QaExample],
    translator: &dyn Translator,
    pivot: &str,
    copies: usize,
    opts: &ParaphraseOptions,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<QaExample>, AugmentError> {
    let mut out = Vec::new();
    for ex in examples {
        let doc = DocumentParaphrases::build(ex, translator, opts)?;
        for i in 0..copies {
            if let Some(new) = doc.sample(&format!("{}-{pivot}-{i}", ex.id), rng)? {
                out.push(new);
            }
        }
    }
    Ok(out)
}
