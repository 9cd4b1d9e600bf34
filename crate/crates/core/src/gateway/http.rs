//! Completion-over-HTTP backend with bearer-token auth.
//!
//! Request body: `{"model", "prompt", "temperature", "max_tokens", "n", "stop", "seed"?}`.
//! Response body: `{"choices": [{"text": ...}], "usage": {"prompt_tokens", "completion_tokens"}}`,
//! the shape served by most OpenAI-compatible model servers.

use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{BackendError, CompletionBackend, CompletionRequest, CompletionResponse, TokenUsage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpBackendConfig {
    pub endpoint: String,
    /// Name of the environment variable holding the bearer token.
    pub auth_env: Option<String>,
    pub request_timeout_s: f64,
}

#[derive(Serialize)]
struct RequestBody<'a> {
    model: &'a str,
    prompt: &'a str,
    temperature: f64,
    max_tokens: u32,
    n: u32,
    stop: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct Choice {
    text: String,
}

#[derive(Deserialize, Default)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

#[derive(Deserialize)]
struct ResponseBody {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Usage,
}

pub struct HttpBackend {
    client: reqwest::Client,
    endpoint: String,
    token: Option<String>,
}

impl HttpBackend {
    pub fn new(cfg: &HttpBackendConfig) -> Result<Self, BackendError> {
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.request_timeout_s.max(0.001)))
            .build()
            .map_err(|e| BackendError::Rejected(format!("building HTTP client: {e}")))?;
        let token = cfg
            .auth_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok());
        Ok(HttpBackend {
            client,
            endpoint: cfg.endpoint.clone(),
            token,
        })
    }
}

#[async_trait]
impl CompletionBackend for HttpBackend {
    async fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let body = RequestBody {
            model: &req.route,
            prompt: &req.prompt,
            temperature: req.params.temperature,
            max_tokens: req.params.max_tokens,
            n: req.params.n_samples,
            stop: &req.params.stop_sequences,
            seed: req.seed,
        };
        let mut builder = self.client.post(&self.endpoint).json(&body);
        if let Some(token) = &self.token {
            builder = builder.bearer_auth(token);
        }
        let started = Instant::now();
        let resp = builder
            .send()
            .await
            .map_err(|e| BackendError::Transient(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(BackendError::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let text = resp.text().await.unwrap_or_default();
            return Err(BackendError::Rejected(format!("HTTP {status}: {text}")));
        }
        let parsed: ResponseBody = resp
            .json()
            .await
            .map_err(|e| BackendError::Malformed(e.to_string()))?;
        Ok(CompletionResponse {
            completions: parsed.choices.into_iter().map(|c| c.text).collect(),
            usage: TokenUsage {
                prompt_tokens: parsed.usage.prompt_tokens,
                completion_tokens: parsed.usage.completion_tokens,
            },
            latency: started.elapsed(),
        })
    }
}
