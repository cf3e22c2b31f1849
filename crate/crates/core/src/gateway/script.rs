//! Deterministic scripted provider: maps request fingerprints, tags, and
//! substrings to canned responses for offline testing. Entries are checked
//! in declaration order; first match wins. Lock-free read-only after
//! construction apart from per-entry use counters.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::Deserialize;

use crate::gateway::{Backend, BackendFault, ChatRequest};
use crate::util::sha256_hex;

/// Predicate over (tag, fingerprint, request text). All present fields must
/// hold. Substring predicates keep scripts maintainable as prompts evolve.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Matcher {
    #[serde(default)]
    pub tag: Option<String>,
    #[serde(default)]
    pub substring: Option<String>,
    #[serde(default)]
    pub fingerprint: Option<String>,
}

impl Matcher {
    pub fn any() -> Self {
        Matcher::default()
    }

    pub fn tag(tag: impl Into<String>) -> Self {
        Matcher {
            tag: Some(tag.into()),
            ..Matcher::default()
        }
    }

    pub fn substring(needle: impl Into<String>) -> Self {
        Matcher {
            substring: Some(needle.into()),
            ..Matcher::default()
        }
    }

    pub fn tag_and(tag: impl Into<String>, needle: impl Into<String>) -> Self {
        Matcher {
            tag: Some(tag.into()),
            substring: Some(needle.into()),
            ..Matcher::default()
        }
    }

    pub fn fingerprint(fingerprint: impl Into<String>) -> Self {
        Matcher {
            fingerprint: Some(fingerprint.into()),
            ..Matcher::default()
        }
    }

    fn matches(&self, tag: &str, fingerprint: &str, text: &str) -> bool {
        if let Some(want) = &self.tag {
            if want != tag {
                return false;
            }
        }
        if let Some(needle) = &self.substring {
            if !text.contains(needle.as_str()) {
                return false;
            }
        }
        if let Some(want) = &self.fingerprint {
            if want != fingerprint {
                return false;
            }
        }
        true
    }
}

/// One canned result: either response text or an injected transport fault.
#[derive(Clone, Debug, Deserialize)]
#[serde(from = "OutcomeRepr")]
pub enum ScriptOutcome {
    Text(String),
    Timeout,
    RateLimited,
}

impl ScriptOutcome {
    pub fn text(text: impl Into<String>) -> Self {
        ScriptOutcome::Text(text.into())
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OutcomeRepr {
    Text(String),
    Fault { fault: String },
}

impl From<OutcomeRepr> for ScriptOutcome {
    fn from(repr: OutcomeRepr) -> Self {
        match repr {
            OutcomeRepr::Text(text) => ScriptOutcome::Text(text),
            OutcomeRepr::Fault { fault } => match fault.as_str() {
                "rate_limited" => ScriptOutcome::RateLimited,
                _ => ScriptOutcome::Timeout,
            },
        }
    }
}

/// A matcher with a sequence of outcomes; successive matches consume the
/// sequence and the final outcome repeats.
#[derive(Debug, Deserialize)]
pub struct ScriptEntry {
    #[serde(rename = "match", default)]
    pub matcher: Matcher,
    pub responses: Vec<ScriptOutcome>,
    #[serde(skip)]
    uses: AtomicUsize,
}

impl ScriptEntry {
    pub fn new(matcher: Matcher, responses: Vec<ScriptOutcome>) -> Self {
        ScriptEntry {
            matcher,
            responses,
            uses: AtomicUsize::new(0),
        }
    }

    fn next_outcome(&self) -> Option<ScriptOutcome> {
        if self.responses.is_empty() {
            return None;
        }
        let use_idx = self.uses.fetch_add(1, Ordering::SeqCst);
        let idx = use_idx.min(self.responses.len() - 1);
        Some(self.responses[idx].clone())
    }
}

/// A matcher paired with a scalar reward score.
#[derive(Clone, Debug, Deserialize)]
pub struct ScoreEntry {
    #[serde(rename = "match", default)]
    pub matcher: Matcher,
    pub score: f64,
}

/// The scripted provider. Chat requests resolve through `entries`, score
/// requests through `scores`, and embeddings come from explicit overrides or
/// a hash-derived unit vector, so identical texts always embed identically.
#[derive(Debug, Deserialize)]
pub struct ScriptedBackend {
    #[serde(default = "default_script_id")]
    pub id: String,
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    #[serde(default)]
    pub entries: Vec<ScriptEntry>,
    #[serde(default)]
    pub scores: Vec<ScoreEntry>,
    #[serde(default)]
    pub embeddings: BTreeMap<String, Vec<f64>>,
}

fn default_script_id() -> String {
    "scripted".to_string()
}

fn default_dimension() -> usize {
    16
}

impl ScriptedBackend {
    pub fn builder(id: impl Into<String>) -> ScriptedBackendBuilder {
        ScriptedBackendBuilder {
            backend: ScriptedBackend {
                id: id.into(),
                dimension: default_dimension(),
                entries: Vec::new(),
                scores: Vec::new(),
                embeddings: BTreeMap::new(),
            },
        }
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }

    fn hash_unit_vector(&self, text: &str) -> Vec<f64> {
        let mut values = Vec::with_capacity(self.dimension);
        for i in 0..self.dimension {
            let digest = sha256_hex(format!("{text}\u{1f}{i}").as_bytes());
            let word = u64::from_str_radix(&digest[..16], 16).unwrap_or(0);
            values.push((word as f64 / u64::MAX as f64) * 2.0 - 1.0);
        }
        let norm: f64 = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            for v in &mut values {
                *v /= norm;
            }
        } else {
            values[0] = 1.0;
        }
        values
    }
}

pub struct ScriptedBackendBuilder {
    backend: ScriptedBackend,
}

impl ScriptedBackendBuilder {
    pub fn entry(mut self, matcher: Matcher, response: impl Into<String>) -> Self {
        self.backend.entries.push(ScriptEntry::new(
            matcher,
            vec![ScriptOutcome::text(response)],
        ));
        self
    }

    pub fn entry_outcomes(mut self, matcher: Matcher, outcomes: Vec<ScriptOutcome>) -> Self {
        self.backend
            .entries
            .push(ScriptEntry::new(matcher, outcomes));
        self
    }

    pub fn score(mut self, matcher: Matcher, score: f64) -> Self {
        self.backend.scores.push(ScoreEntry { matcher, score });
        self
    }

    pub fn embedding(mut self, text: impl Into<String>, values: Vec<f64>) -> Self {
        self.backend.embeddings.insert(text.into(), values);
        self
    }

    pub fn dimension(mut self, dimension: usize) -> Self {
        self.backend.dimension = dimension.max(1);
        self
    }

    pub fn build(self) -> ScriptedBackend {
        self.backend
    }
}

impl Backend for ScriptedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn chat(&self, request: &ChatRequest) -> Result<String, BackendFault> {
        let fingerprint = request.fingerprint();
        let text = request.concatenated_text();
        for entry in &self.entries {
            if entry.matcher.matches(&request.tag, &fingerprint, &text) {
                return match entry.next_outcome() {
                    Some(ScriptOutcome::Text(response)) => Ok(response),
                    Some(ScriptOutcome::Timeout) => Err(BackendFault::Timeout),
                    Some(ScriptOutcome::RateLimited) => Err(BackendFault::RateLimited),
                    None => Err(BackendFault::ScriptMiss {
                        tag: request.tag.clone(),
                        fingerprint,
                    }),
                };
            }
        }
        Err(BackendFault::ScriptMiss {
            tag: request.tag.clone(),
            fingerprint,
        })
    }

    fn embed(&self, _tag: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendFault> {
        Ok(texts
            .iter()
            .map(|text| {
                self.embeddings
                    .get(text)
                    .cloned()
                    .unwrap_or_else(|| self.hash_unit_vector(text))
            })
            .collect())
    }

    fn score(&self, request: &ChatRequest) -> Result<f64, BackendFault> {
        let fingerprint = request.fingerprint();
        let text = request.concatenated_text();
        for entry in &self.scores {
            if entry.matcher.matches(&request.tag, &fingerprint, &text) {
                return Ok(entry.score);
            }
        }
        Err(BackendFault::ScriptMiss {
            tag: request.tag.clone(),
            fingerprint,
        })
    }
}
