//! Live HTTP provider speaking an OpenAI-compatible chat/embeddings API plus
//! a plain `/score` endpoint for classifier reward models.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::gateway::{Backend, BackendFault, ChatRequest, ChatRole};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HttpBackendConfig {
    /// Base URL, e.g. `https://api.example.com/v1`.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: u64,
}

fn default_timeout_s() -> u64 {
    120
}

pub struct HttpBackend {
    id: String,
    config: HttpBackendConfig,
    token: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(id: impl Into<String>, config: HttpBackendConfig) -> Result<Self, String> {
        let token = match &config.auth_env {
            Some(var) => {
                Some(std::env::var(var).map_err(|_| format!("auth env var `{var}` is not set"))?)
            }
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_s))
            .build()
            .map_err(|e| format!("http client: {e}"))?;
        Ok(HttpBackend {
            id: id.into(),
            config,
            token,
            client,
        })
    }

    fn post(&self, path: &str, body: serde_json::Value) -> Result<serde_json::Value, BackendFault> {
        let url = format!("{}/{}", self.config.endpoint.trim_end_matches('/'), path);
        let mut request = self.client.post(url).json(&body);
        if let Some(token) = &self.token {
            request = request.bearer_auth(token);
        }
        let response = request.send().map_err(|e| {
            if e.is_timeout() {
                BackendFault::Timeout
            } else {
                BackendFault::Fatal(e.to_string())
            }
        })?;
        let status = response.status();
        if status.as_u16() == 429 {
            return Err(BackendFault::RateLimited);
        }
        if status.is_server_error() {
            return Err(BackendFault::Timeout);
        }
        if !status.is_success() {
            return Err(BackendFault::Fatal(format!("http status {status}")));
        }
        response
            .json()
            .map_err(|e| BackendFault::Fatal(format!("response body: {e}")))
    }

    fn chat_messages(request: &ChatRequest) -> Vec<serde_json::Value> {
        let mut messages = Vec::with_capacity(request.messages.len() + 1);
        if !request.system_prompt.is_empty() {
            messages.push(json!({"role": "system", "content": request.system_prompt}));
        }
        for m in &request.messages {
            let role = match m.role {
                ChatRole::User => "user",
                ChatRole::Assistant => "assistant",
            };
            messages.push(json!({"role": role, "content": m.content}));
        }
        messages
    }
}

impl Backend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn chat(&self, request: &ChatRequest) -> Result<String, BackendFault> {
        let mut body = json!({
            "model": self.config.model,
            "messages": Self::chat_messages(request),
            "temperature": request.temperature,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        let value = self.post("chat/completions", body)?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| BackendFault::Fatal("missing choices[0].message.content".into()))
    }

    fn embed(&self, _tag: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendFault> {
        let body = json!({"model": self.config.model, "input": texts});
        let value = self.post("embeddings", body)?;
        let data = value["data"]
            .as_array()
            .ok_or_else(|| BackendFault::Fatal("missing data array".into()))?;
        let mut out = Vec::with_capacity(data.len());
        for item in data {
            let vector = item["embedding"]
                .as_array()
                .ok_or_else(|| BackendFault::Fatal("missing embedding".into()))?
                .iter()
                .map(|v| v.as_f64().unwrap_or(f64::NAN))
                .collect();
            out.push(vector);
        }
        Ok(out)
    }

    fn score(&self, request: &ChatRequest) -> Result<f64, BackendFault> {
        let body = json!({
            "model": self.config.model,
            "messages": Self::chat_messages(request),
        });
        let value = self.post("score", body)?;
        value["score"]
            .as_f64()
            .ok_or_else(|| BackendFault::Fatal("missing score field".into()))
    }
}
