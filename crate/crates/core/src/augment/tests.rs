use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::text::QaExample;

fn scripted_five_by_five(sentence: &str) -> ScriptedTranslator {
    let mut t = ScriptedTranslator::new();
    let fwd: Vec<String> = (0..5).map(|i| format!("pivot {i}")).collect();
    t = t.on(Direction::Forward, sentence, fwd.clone());
    for (i, f) in fwd.iter().enumerate() {
        let back = (0..5).map(|j| format!("Variant {i} {j} of it."));
        t = t.on(Direction::Back, f, back);
    }
    t
}

#[test]
fn beam_of_five_gives_twenty_five() {
    let s = "The cat sat on the mat.";
    let out = paraphrase_sentence(s, &scripted_five_by_five(s), 5).unwrap();
    assert_eq!(out.len(), 25);
    let mut dedup = out.clone();
    dedup.sort();
    dedup.dedup();
    assert_eq!(dedup.len(), 25);
}

#[test]
fn duplicates_and_original_are_dropped() {
    let s = "Hello there.";
    let t = ScriptedTranslator::new()
        .on(Direction::Forward, s, ["a", "b"])
        .on(Direction::Back, "a", ["Hello there.", "Hi there."])
        .on(Direction::Back, "b", ["Hi there.", "Hey there."]);
    assert_eq!(paraphrase_sentence(s, &t, 2).unwrap(), vec!["Hi there.", "Hey there."]);
}

#[test]
fn batched_matches_single() {
    let sents: Vec<String> = ["One fish.", "Two fish.", "Red fish.", "Blue fish."]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mock = MockTranslator::with_default_synonyms();
    let batched = paraphrase_sentences(&sents, &mock, 3, 3).unwrap();
    for (s, b) in sents.iter().zip(&batched) {
        assert_eq!(&paraphrase_sentence(s, &mock, 3).unwrap(), b);
    }
}

fn doc() -> QaExample {
    let context = "Paris is large. The capital of France is Paris. It has a river.";
    let start = context.find("France").unwrap();
    QaExample::new("d1", context, "Where?", "France", start, vec![]).unwrap()
}

#[test]
fn document_answer_is_realigned() {
    let ex = doc();
    let t = ScriptedTranslator::new()
        .on(Direction::Forward, "The capital of France is Paris.", ["x"])
        .on(Direction::Back, "x", ["France has Paris as its capital."]);
    let opts = ParaphraseOptions {
        beam: 1,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = paraphrase_document(&ex, &t, &opts, &mut rng).unwrap().unwrap();
    assert_eq!(
        out.context,
        "Paris is large. France has Paris as its capital. It has a river."
    );
    assert_eq!(out.answer_text, "France");
    assert_eq!(out.span_text(out.answer_span.0, out.answer_span.1), "France");
    assert_eq!(out.question, ex.question);
}

#[test]
fn lost_answer_keeps_sentence_or_drops_document() {
    let ex = doc();
    let t = ScriptedTranslator::new()
        .on(Direction::Forward, "The capital of France is Paris.", ["x"])
        .on(Direction::Back, "x", ["Nothing relevant here."]);
    let mut opts = ParaphraseOptions {
        beam: 1,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let kept = paraphrase_document(&ex, &t, &opts, &mut rng).unwrap().unwrap();
    assert_eq!(kept.context, ex.context);
    assert_eq!(kept.answer_start, ex.answer_start);
    opts.require_answer_paraphrase = true;
    assert!(paraphrase_document(&ex, &t, &opts, &mut rng).unwrap().is_none());
}

#[test]
fn dataset_ids_and_validity() {
    let ex = doc();
    let mock = MockTranslator::with_default_synonyms();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let out = augment_dataset(&[ex], &mock, "fr", 3, &ParaphraseOptions::default(), &mut rng).unwrap();
    let ids: Vec<&str> = out.iter().map(|e| e.id.as_str()).collect();
    assert_eq!(ids, ["d1-fr-0", "d1-fr-1", "d1-fr-2"]);
    for e in &out {
        e.validate().unwrap();
    }
}

#[test]
fn unavailable_translator_surfaces() {
    let http = HttpTranslator::new("http://127.0.0.1:9", std::time::Duration::from_millis(200), 0);
    let err = paraphrase_sentence("Hi.", &http, 2).unwrap_err();
    assert!(matches!(err, AugmentError::TranslatorUnavailable(_)));
}
