//! Round-trip translation backends.

use std::collections::{BTreeMap, HashMap};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::AugmentError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// English to the pivot language.
    Forward,
    /// Pivot language back to English.
    Back,
}

/// A translation service. For each input text it returns up to `beam`
/// translations, in request order.
pub trait Translator: Sync {
    fn translate(
        &self,
        texts: &[String],
        beam: usize,
        direction: Direction,
    ) -> Result<Vec<Vec<String>>, AugmentError>;
}

#[derive(Serialize)]
struct Request<'a> {
    texts: &'a [String],
    beam: usize,
    direction: Direction,
}

#[derive(Deserialize)]
struct Response {
    translations: Vec<Vec<String>>,
}

/// Client for a JSON translation service at `{base_url}/translate`.
#[derive(Debug, Clone)]
pub struct HttpTranslator {
    pub base_url: String,
    pub timeout: Duration,
    pub retries: u32,
    agent: ureq::Agent,
}

impl HttpTranslator {
    pub fn new(base_url: impl Into<String>, timeout: Duration, retries: u32) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            base_url: base_url.into(),
            timeout,
            retries,
            agent,
        }
    }

    fn url(&self) -> String {
        format!("{}/translate", self.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, req: &Request<'_>) -> Result<Response, (bool, AugmentError)> {
        let url = self.url();
        let mut resp = self.agent.post(&url).send_json(req).map_err(|e| match e {
            ureq::Error::StatusCode(code) if (400..500).contains(&code) => (
                false,
                AugmentError::TranslatorProtocol(format!("{url} answered HTTP {code}")),
            ),
            other => (true, AugmentError::TranslatorUnavailable(format!("{url}: {other}"))),
        })?;
        resp.body_mut()
            .read_json::<Response>()
            .map_err(|e| (false, AugmentError::TranslatorProtocol(format!("{url}: {e}"))))
    }
}

impl Translator for HttpTranslator {
    fn translate(
        &self,
        texts: &[String],
        beam: usize,
        direction: Direction,
    ) -> Result<Vec<Vec<String>>, AugmentError> {
        let req = Request {
            texts,
            beam,
            direction,
        };
        let mut last = None;
        for attempt in 0..=self.retries {
            if attempt > 0 {
                thread::sleep(Duration::from_millis(100 << attempt.min(5)));
            }
            match self.attempt(&req) {
                Ok(resp) => return check_response(resp.translations, texts.len(), beam),
                Err((true, e)) => last = Some(e),
                Err((false, e)) => return Err(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }
}

fn check_response(
    translations: Vec<Vec<String>>,
    expected: usize,
    beam: usize,
) -> Result<Vec<Vec<String>>, AugmentError> {
    if translations.len() != expected {
        return Err(AugmentError::TranslatorProtocol(format!(
            "expected {expected} translation lists, got {}",
            translations.len()
        )));
    }
    if let Some(bad) = translations.iter().find(|t| t.len() > beam) {
        return Err(AugmentError::TranslatorProtocol(format!(
            "{} translations returned for beam {beam}",
            bad.len()
        )));
    }
    Ok(translations)
}

/// Offline stand-in for a translation model: the forward pass tags each beam
/// and the backward pass rewrites words through a synonym table and swaps the
/// clauses around the first comma on odd beams.
#[derive(Debug, Clone, Default)]
pub struct MockTranslator {
    pub synonyms: BTreeMap<String, Vec<String>>,
    /// Return every text unchanged.
    pub identity: bool,
}

impl MockTranslator {
    pub fn identity() -> Self {
        Self {
            identity: true,
            ..Self::default()
        }
    }

    pub fn with_default_synonyms() -> Self {
        let table: &[(&str, &[&str])] = &[
            ("big", &["large", "huge"]),
            ("small", &["little", "tiny"]),
            ("city", &["town"]),
            ("began", &["started"]),
            ("started", &["began"]),
            ("famous", &["well-known", "renowned"]),
            ("many", &["numerous"]),
            ("offer", &["provide"]),
            ("built", &["constructed"]),
            ("important", &["significant"]),
            ("largest", &["biggest"]),
            ("people", &["persons"]),
            ("old", &["ancient"]),
            ("quickly", &["rapidly"]),
        ];
        Self {
            synonyms: table
                .iter()
                .map(|(w, s)| (w.to_string(), s.iter().map(|x| x.to_string()).collect()))
                .collect(),
            identity: false,
        }
    }

    fn rewrite(&self, text: &str, variant: usize) -> String {
        let mut words: Vec<String> = text
            .split(' ')
            .enumerate()
            .map(|(i, w)| {
                let key = w.to_lowercase();
                match self.synonyms.get(&key) {
                    Some(alts) if !(variant + i).is_multiple_of(alts.len() + 1) => {
                        alts[(variant + i) % (alts.len() + 1) - 1].clone()
                    }
                    _ => w.to_string(),
                }
            })
            .collect();
        if variant % 2 == 1 {
            if let Some(pos) = words.iter().position(|w| w.ends_with(',')) {
                let head = words[..=pos].join(" ");
                let tail = words[pos + 1..].join(" ");
                let (tail, end) = match tail.strip_suffix('.') {
                    Some(t) => (t.trim_end().to_string(), "."),
                    None => (tail, ""),
                };
                if !tail.is_empty() {
                    let head = head.trim_end_matches(',');
                    words = vec![format!("{tail}, {}{end}", lower_first(head))];
                }
            }
        }
        words.join(" ")
    }
}

fn lower_first(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) if !s.starts_with("I ") => f.to_lowercase().chain(c).collect(),
        Some(f) => std::iter::once(f).chain(c).collect(),
        None => String::new(),
    }
}

const TAG_OPEN: char = '\u{27e6}';
const TAG_CLOSE: char = '\u{27e7}';

impl Translator for MockTranslator {
    fn translate(
        &self,
        texts: &[String],
        beam: usize,
        direction: Direction,
    ) -> Result<Vec<Vec<String>>, AugmentError> {
        Ok(texts
            .iter()
            .map(|t| {
                if self.identity {
                    return vec![t.clone(); beam.min(1)];
                }
                match direction {
                    Direction::Forward => (0..beam).map(|i| format!("{TAG_OPEN}{i}{TAG_CLOSE}{t}")).collect(),
                    Direction::Back => {
                        let (tag, body) = match t.strip_prefix(TAG_OPEN).and_then(|r| r.split_once(TAG_CLOSE)) {
                            Some((n, body)) => (n.parse().unwrap_or(0), body),
                            None => (0, t.as_str()),
                        };
                        (0..beam).map(|j| self.rewrite(body, tag * beam + j)).collect()
                    }
                }
            })
            .collect())
    }
}

/// Fixed answers per `(direction, text)`; unknown texts translate to
/// themselves. Lists longer than the beam are cut to it.
#[derive(Debug, Clone, Default)]
pub struct ScriptedTranslator {
    pub script: HashMap<(Direction, String), Vec<String>>,
}

impl ScriptedTranslator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn on<S: Into<String>>(
        mut self,
        direction: Direction,
        text: &str,
        outputs: impl IntoIterator<Item = S>,
    ) -> Self {
        self.script.insert(
            (direction, text.to_string()),
            outputs.into_iter().map(Into::into).collect(),
        );
        self
    }
}

impl Translator for ScriptedTranslator {
    fn translate(
        &self,
        texts: &[String],
        beam: usize,
        direction: Direction,
    ) -> Result<Vec<Vec<String>>, AugmentError> {
        Ok(texts
            .iter()
            .map(|t| match self.script.get(&(direction, t.clone())) {
                Some(out) => out.iter().take(beam).cloned().collect(),
                None => vec![t.clone()],
            })
            .collect())
    }
}
