//! Uniform provider gateway for chat completion, text embedding, and scalar
//! scoring, with retries, in-flight rate limiting, and per-attempt audit
//! logging. No other module contacts the network: the gateway is the only
//! component holding endpoint configuration.

mod http;
mod script;

pub use http::{HttpBackend, HttpBackendConfig};
pub use script::{Matcher, ScoreEntry, ScriptEntry, ScriptOutcome, ScriptedBackend};

use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::{now_ms, sha256_hex};

/// Message author within a chat request.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatRole {
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

/// Carrier for every LLM interaction in the pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    /// Free-form label for logging and script matching, e.g. "selector".
    pub tag: String,
    pub system_prompt: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ChatRequest {
    /// A request whose whole payload is one user message; the common shape
    /// for pipeline roles that render context into a single prompt.
    pub fn single(
        tag: impl Into<String>,
        system: impl Into<String>,
        user: impl Into<String>,
    ) -> Self {
        ChatRequest {
            tag: tag.into(),
            system_prompt: system.into(),
            messages: vec![ChatMessage {
                role: ChatRole::User,
                content: user.into(),
            }],
            temperature: 0.7,
            seed: None,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    /// Messages must alternate roles (or be empty) and carry non-empty content.
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest("negative temperature".into()));
        }
        for pair in self.messages.windows(2) {
            if pair[0].role == pair[1].role {
                return Err(GatewayError::InvalidRequest(
                    "messages do not alternate roles".into(),
                ));
            }
        }
        if self.messages.iter().any(|m| m.content.is_empty()) {
            return Err(GatewayError::InvalidRequest("empty message content".into()));
        }
        Ok(())
    }

    /// System prompt and message contents joined; the substrate for script
    /// substring matching and audit records.
    pub fn concatenated_text(&self) -> String {
        let mut out = self.system_prompt.clone();
        for m in &self.messages {
            out.push('\n');
            out.push_str(&m.content);
        }
        out
    }

    /// Stable hash of (tag, concatenated message contents).
    pub fn fingerprint(&self) -> String {
        let mut payload = self.tag.clone();
        payload.push('\u{1f}');
        payload.push_str(&self.concatenated_text());
        sha256_hex(payload.as_bytes())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub provider_id: String,
    pub latency_ms: u64,
}

/// A fixed-dimension embedding with finite components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, GatewayError> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(GatewayError::InvalidRequest(
                "embedding must be non-empty and finite".into(),
            ));
        }
        Ok(EmbeddingVector { values })
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        let dot: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum();
        let na: f64 = self.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb: f64 = other.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("provider timed out after {attempts} attempts")]
    ProviderTimeout { attempts: u32 },
    #[error("provider rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("no script entry matches request tagged `{tag}` (fingerprint {fingerprint})")]
    ScriptMiss { tag: String, fingerprint: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("empty embedding batch")]
    EmptyBatch,
    #[error("provider failure: {0}")]
    Provider(String),
}

/// Transport-level outcome of a single backend attempt.
#[derive(Clone, Debug)]
pub enum BackendFault {
    Timeout,
    RateLimited,
    ScriptMiss { tag: String, fingerprint: String },
    Fatal(String),
}

impl BackendFault {
    fn retryable(&self) -> bool {
        matches!(self, BackendFault::Timeout | BackendFault::RateLimited)
    }

    fn status(&self) -> CallStatus {
        match self {
            BackendFault::Timeout => CallStatus::Timeout,
            BackendFault::RateLimited => CallStatus::RateLimited,
            BackendFault::ScriptMiss { .. } => CallStatus::ScriptMiss,
            BackendFault::Fatal(_) => CallStatus::Failed,
        }
    }
}

/// A chat/embedding/scoring backend; implemented by the scripted provider
/// and the HTTP provider.
pub trait Backend: Send + Sync {
    fn id(&self) -> &str;
    fn chat(&self, request: &ChatRequest) -> Result<String, BackendFault>;
    fn embed(&self, tag: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendFault>;
    fn score(&self, request: &ChatRequest) -> Result<f64, BackendFault>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallStatus {
    Ok,
    Timeout,
    RateLimited,
    ScriptMiss,
    Failed,
}

/// One record per attempt, including retried attempts.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AuditRecord {
    pub tag: String,
    pub provider_id: String,
    pub attempt: u32,
    pub operation: String,
    pub request_fingerprint: String,
    pub request_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_fingerprint: Option<String>,
    pub status: CallStatus,
    pub latency_ms: u64,
    pub timestamp_ms: u64,
}

/// Internally synchronized call log shared by all gateways of a run.
#[derive(Clone, Default)]
pub struct AuditLog {
    records: Arc<Mutex<Vec<AuditRecord>>>,
}

impl AuditLog {
    pub fn new() -> Self {
        Self::default()
    }

    fn append(&self, record: AuditRecord) {
        self.records.lock().expect("audit lock").push(record);
    }

    pub fn len(&self) -> usize {
        self.records.lock().expect("audit lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Snapshot of all records so far.
    pub fn records(&self) -> Vec<AuditRecord> {
        self.records.lock().expect("audit lock").clone()
    }

    pub fn count_tag(&self, tag: &str) -> usize {
        self.records
            .lock()
            .expect("audit lock")
            .iter()
            .filter(|r| r.tag == tag)
            .count()
    }

    /// Total provider calls per tag, for run manifests.
    pub fn counts_by_tag(&self) -> std::collections::BTreeMap<String, usize> {
        let mut out = std::collections::BTreeMap::new();
        for record in self.records.lock().expect("audit lock").iter() {
            *out.entry(record.tag.clone()).or_insert(0) += 1;
        }
        out
    }

    pub fn write_jsonl(&self, path: &std::path::Path) -> std::io::Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut out = String::new();
        for record in self.records.lock().expect("audit lock").iter() {
            out.push_str(&serde_json::to_string(record).expect("audit record serializes"));
            out.push('\n');
        }
        std::fs::write(path, out)
    }
}

/// Retry budget; `attempts` is the total number of tries, so a request that
/// faults `attempts` times surfaces the final fault.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff_ms: u64,
    pub backoff_multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            initial_backoff_ms: 1_000,
            backoff_multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    /// Zero-backoff policy for offline tests.
    pub fn immediate(attempts: u32) -> Self {
        RetryPolicy {
            attempts,
            initial_backoff_ms: 0,
            backoff_multiplier: 1.0,
        }
    }

    fn backoff_after(&self, attempt: u32) -> Duration {
        let ms = self.initial_backoff_ms as f64 * self.backoff_multiplier.powi(attempt as i32 - 1);
        Duration::from_millis(ms as u64)
    }
}

/// Counting semaphore bounding in-flight requests per provider.
struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Semaphore {
            permits: Mutex::new(permits.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().expect("semaphore lock");
        while *permits == 0 {
            permits = self.cv.wait(permits).expect("semaphore wait");
        }
        *permits -= 1;
        SemaphoreGuard { sem: self }
    }
}

struct SemaphoreGuard<'a> {
    sem: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.sem.permits.lock().expect("semaphore lock") += 1;
        self.sem.cv.notify_one();
    }
}

/// A backend plus retry policy, rate limiter, and shared audit log.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn Backend>,
    policy: RetryPolicy,
    limiter: Arc<Semaphore>,
    audit: AuditLog,
}

impl Gateway {
    pub fn new(
        backend: Arc<dyn Backend>,
        policy: RetryPolicy,
        max_in_flight: usize,
        audit: AuditLog,
    ) -> Self {
        Gateway {
            backend,
            policy,
            limiter: Arc::new(Semaphore::new(max_in_flight)),
            audit,
        }
    }

    /// Scripted gateway with zero backoff; the standard offline test double.
    pub fn scripted(backend: ScriptedBackend, audit: AuditLog) -> Self {
        Gateway::new(Arc::new(backend), RetryPolicy::immediate(3), 5, audit)
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }

    pub fn provider_id(&self) -> &str {
        self.backend.id()
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let fingerprint = request.fingerprint();
        let text = request.concatenated_text();
        let outcome = self.run_attempts("chat", &request.tag, &fingerprint, &text, |backend| {
            backend.chat(request).map(|content| {
                let hash = sha256_hex(content.as_bytes());
                (content, hash)
            })
        })?;
        Ok(ChatResponse {
            content: outcome.0,
            provider_id: self.backend.id().to_string(),
            latency_ms: outcome.1,
        })
    }

    pub fn embed(&self, tag: &str, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::EmptyBatch);
        }
        let joined = texts.join("\u{1f}");
        let fingerprint = sha256_hex(format!("{tag}\u{1f}{joined}").as_bytes());
        let outcome = self.run_attempts("embed", tag, &fingerprint, &joined, |backend| {
            backend.embed(tag, texts).map(|vectors| {
                let hash = sha256_hex(format!("{vectors:?}").as_bytes());
                (vectors, hash)
            })
        })?;
        let vectors = outcome.0;
        let mut out = Vec::with_capacity(vectors.len());
        for values in vectors {
            out.push(EmbeddingVector::new(values)?);
        }
        if out.windows(2).any(|w| w[0].dimension() != w[1].dimension()) {
            return Err(GatewayError::Provider(
                "embedding batch has mixed dimensions".into(),
            ));
        }
        Ok(out)
    }

    pub fn score(&self, request: &ChatRequest) -> Result<f64, GatewayError> {
        request.validate()?;
        let fingerprint = request.fingerprint();
        let text = request.concatenated_text();
        let outcome = self.run_attempts("score", &request.tag, &fingerprint, &text, |backend| {
            backend
                .score(request)
                .map(|s| (s, sha256_hex(format!("{s}").as_bytes())))
        })?;
        Ok(outcome.0)
    }

    fn run_attempts<T>(
        &self,
        operation: &str,
        tag: &str,
        fingerprint: &str,
        request_text: &str,
        call: impl Fn(&dyn Backend) -> Result<(T, String), BackendFault>,
    ) -> Result<(T, u64), GatewayError> {
        let mut last_fault = BackendFault::Timeout;
        for attempt in 1..=self.policy.attempts.max(1) {
            let started = Instant::now();
            let result = {
                let _permit = self.limiter.acquire();
                call(self.backend.as_ref())
            };
            let latency_ms = started.elapsed().as_millis() as u64;
            let (status, response_fingerprint) = match &result {
                Ok((_, hash)) => (CallStatus::Ok, Some(hash.clone())),
                Err(fault) => (fault.status(), None),
            };
            self.audit.append(AuditRecord {
                tag: tag.to_string(),
                provider_id: self.backend.id().to_string(),
                attempt,
                operation: operation.to_string(),
                request_fingerprint: fingerprint.to_string(),
                request_text: request_text.to_string(),
                response_fingerprint,
                status,
                latency_ms,
                timestamp_ms: now_ms(),
            });
            match result {
                Ok((value, _)) => return Ok((value, latency_ms)),
                Err(fault) => {
                    if !fault.retryable() {
                        return Err(match fault {
                            BackendFault::ScriptMiss { tag, fingerprint } => {
                                GatewayError::ScriptMiss { tag, fingerprint }
                            }
                            BackendFault::Fatal(msg) => GatewayError::Provider(msg),
                            other => GatewayError::Provider(format!("{other:?}")),
                        });
                    }
                    last_fault = fault;
                    if attempt < self.policy.attempts {
                        let backoff = self.policy.backoff_after(attempt);
                        if !backoff.is_zero() {
                            std::thread::sleep(backoff);
                        }
                    }
                }
            }
        }
        Err(match last_fault {
            BackendFault::RateLimited => GatewayError::RateLimited {
                attempts: self.policy.attempts,
            },
            _ => GatewayError::ProviderTimeout {
                attempts: self.policy.attempts,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(tag: &str, text: &str) -> ChatRequest {
        ChatRequest::single(tag, "system", text)
    }

    #[test]
    fn scripted_identity_for_matching_tag() {
        let backend = ScriptedBackend::builder("test")
            .entry(Matcher::tag("selector"), "canned text")
            .build();
        let gateway = Gateway::scripted(backend, AuditLog::new());
        let response = gateway.complete(&request("selector", "anything")).unwrap();
        assert_eq!(response.content, "canned text");
        assert_eq!(gateway.audit().len(), 1);
    }

    #[test]
    fn script_miss_fails_loudly() {
        let backend = ScriptedBackend::builder("test")
            .entry(Matcher::tag("selector"), "canned")
            .build();
        let gateway = Gateway::scripted(backend, AuditLog::new());
        let err = gateway.complete(&request("judge", "anything")).unwrap_err();
        assert!(matches!(err, GatewayError::ScriptMiss { .. }));
        // the miss attempt is still logged
        assert_eq!(gateway.audit().len(), 1);
    }

    #[test]
    fn three_faults_exhaust_three_attempts() {
        let backend = ScriptedBackend::builder("test")
            .entry_outcomes(
                Matcher::any(),
                vec![
                    ScriptOutcome::Timeout,
                    ScriptOutcome::Timeout,
                    ScriptOutcome::Timeout,
                    ScriptOutcome::text("would succeed on attempt 4"),
                ],
            )
            .build();
        let gateway = Gateway::scripted(backend, AuditLog::new());
        let err = gateway.complete(&request("any", "x")).unwrap_err();
        assert!(matches!(err, GatewayError::ProviderTimeout { attempts: 3 }));
        // every retried attempt is logged
        assert_eq!(gateway.audit().len(), 3);
    }

    #[test]
    fn fault_then_success_recovers() {
        let backend = ScriptedBackend::builder("test")
            .entry_outcomes(
                Matcher::any(),
                vec![ScriptOutcome::RateLimited, ScriptOutcome::text("ok")],
            )
            .build();
        let gateway = Gateway::scripted(backend, AuditLog::new());
        let response = gateway.complete(&request("any", "x")).unwrap();
        assert_eq!(response.content, "ok");
        assert_eq!(gateway.audit().len(), 2);
    }

    #[test]
    fn scripted_sequences_are_deterministic_across_restarts() {
        let run = || {
            let backend = ScriptedBackend::builder("test")
                .entry_outcomes(
                    Matcher::tag("gen"),
                    vec![ScriptOutcome::text("first"), ScriptOutcome::text("second")],
                )
                .build();
            let gateway = Gateway::scripted(backend, AuditLog::new());
            let a = gateway.complete(&request("gen", "x")).unwrap().content;
            let b = gateway.complete(&request("gen", "x")).unwrap().content;
            let c = gateway.complete(&request("gen", "x")).unwrap().content;
            (a, b, c)
        };
        assert_eq!(run(), run());
        assert_eq!(run().2, "second"); // last response repeats
    }

    #[test]
    fn embed_returns_one_vector_per_text_same_dimension() {
        let backend = ScriptedBackend::builder("test").build();
        let gateway = Gateway::scripted(backend, AuditLog::new());
        let vectors = gateway
            .embed("embedder", &["a".to_string(), "b".to_string()])
            .unwrap();
        assert_eq!(vectors.len(), 2);
        assert_eq!(vectors[0].dimension(), vectors[1].dimension());
        assert_ne!(vectors[0], vectors[1]);
    }

    #[test]
    fn identical_texts_embed_identically_and_cosine_self_is_one() {
        let backend = ScriptedBackend::builder("test").build();
        let gateway = Gateway::scripted(backend, AuditLog::new());
        let vectors = gateway
            .embed("embedder", &["same".to_string(), "same".to_string()])
            .unwrap();
        assert_eq!(vectors[0], vectors[1]);
        assert!((vectors[0].cosine(&vectors[1]) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn alternation_invariant_enforced() {
        let mut req = request("t", "first");
        req.messages.push(ChatMessage {
            role: ChatRole::User,
            content: "second user in a row".into(),
        });
        let backend = ScriptedBackend::builder("test")
            .entry(Matcher::any(), "x")
            .build();
        let gateway = Gateway::scripted(backend, AuditLog::new());
        assert!(matches!(
            gateway.complete(&req),
            Err(GatewayError::InvalidRequest(_))
        ));
    }

    #[test]
    fn scripted_score_matches_by_substring() {
        let backend = ScriptedBackend::builder("rm")
            .score(Matcher::substring("turn one"), 1.25)
            .score(Matcher::substring("turn two"), -0.5)
            .build();
        let gateway = Gateway::scripted(backend, AuditLog::new());
        assert_eq!(gateway.score(&request("scorer", "turn one")).unwrap(), 1.25);
        assert_eq!(gateway.score(&request("scorer", "turn two")).unwrap(), -0.5);
        assert!(gateway.score(&request("scorer", "turn three")).is_err());
    }
}
