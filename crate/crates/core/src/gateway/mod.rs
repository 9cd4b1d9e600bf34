//! Uniform access to completion backends.
//!
//! [`Gateway`] wraps a [`CompletionBackend`] with parameter validation, an
//! admission limit on in-flight requests, request/token quotas, and retry
//! with jittered exponential backoff on transient transport failures.

mod http;
mod mock;
pub mod prompts;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Semaphore;

pub use http::{HttpBackend, HttpBackendConfig};
pub use mock::{MockBackend, MockScriptEntry, MockScriptError};

use crate::statement::sha256_hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub n_samples: u32,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
}

impl SamplingParams {
    /// Single-shot greedy decoding.
    pub fn greedy(max_tokens: u32) -> Self {
        SamplingParams {
            temperature: 0.0,
            max_tokens,
            n_samples: 1,
            stop_sequences: Vec::new(),
        }
    }

    pub fn sampled(temperature: f64, max_tokens: u32, n_samples: u32) -> Self {
        SamplingParams {
            temperature,
            max_tokens,
            n_samples,
            stop_sequences: Vec::new(),
        }
    }

    pub fn with_stop(mut self, stop: impl Into<String>) -> Self {
        self.stop_sequences.push(stop.into());
        self
    }

    pub fn with_samples(&self, n_samples: u32) -> Self {
        SamplingParams {
            n_samples,
            ..self.clone()
        }
    }

    pub fn is_greedy(&self) -> bool {
        self.temperature == 0.0
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidParams(format!(
                "temperature must be a finite value >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidParams("max_tokens must be > 0".into()));
        }
        if self.n_samples == 0 {
            return Err(GatewayError::InvalidParams("n_samples must be >= 1".into()));
        }
        if self.is_greedy() && self.n_samples != 1 {
            return Err(GatewayError::InvalidParams(
                "greedy decoding (temperature 0) is single-shot: n_samples must be 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub params: SamplingParams,
    /// Backend-specific model route (for example, the endpoint of the
    /// current iteration's fine-tuned model).
    pub route: String,
    /// Sampling seed; proof attempts pass their sample index here.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl CompletionRequest {
    pub fn new(
        prompt: impl Into<String>,
        params: SamplingParams,
        route: impl Into<String>,
    ) -> Self {
        CompletionRequest {
            prompt: prompt.into(),
            params,
            route: route.into(),
            seed: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl TokenUsage {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResponse {
    pub completions: Vec<String>,
    pub usage: TokenUsage,
    pub latency: Duration,
}

/// Failure reported by a backend for a single transport call.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    /// Retryable: connection refused, timeouts, 429, 5xx.
    #[error("transient transport failure: {0}")]
    Transient(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("request rejected: {0}")]
    Rejected(String),
    #[error("no scripted completion for prompt digest {0}")]
    Unscripted(String),
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum GatewayError {
    #[error("backend unavailable after {retries} retries: {last_error}")]
    BackendUnavailable { retries: u32, last_error: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("budget exceeded: {0}")]
    BudgetExceeded(String),
    #[error("invalid sampling parameters: {0}")]
    InvalidParams(String),
    #[error("request rejected by backend: {0}")]
    Rejected(String),
    #[error("no scripted completion for prompt digest {0}")]
    Unscripted(String),
}

#[async_trait]
pub trait CompletionBackend: Send + Sync {
    /// One transport call. Must return exactly `n_samples` completions.
    async fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError>;
}

/// Hex SHA-256 of the prompt bytes; keys mock scripts.
pub fn prompt_digest(prompt: &str) -> String {
    sha256_hex(prompt.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub initial_backoff_ms: u64,
    pub multiplier: f64,
    /// Relative jitter, 0.2 means ±20%.
    pub jitter: f64,
    pub max_backoff_ms: u64,
    /// Retries after the first call; total transport calls are `1 + max_retries`.
    pub max_retries: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            initial_backoff_ms: 1000,
            multiplier: 2.0,
            jitter: 0.2,
            max_backoff_ms: 60_000,
            max_retries: 4,
        }
    }
}

impl RetryPolicy {
    pub fn no_delay(max_retries: u32) -> Self {
        RetryPolicy {
            initial_backoff_ms: 0,
            jitter: 0.0,
            max_retries,
            ..Default::default()
        }
    }

    /// Delay before retry number `retry` (0-based), before jitter.
    pub fn base_delay(&self, retry: u32) -> Duration {
        let ms = self.initial_backoff_ms as f64 * self.multiplier.powi(retry as i32);
        Duration::from_millis(ms.min(self.max_backoff_ms as f64) as u64)
    }

    fn jittered_delay(&self, retry: u32) -> Duration {
        let base = self.base_delay(retry);
        if self.jitter <= 0.0 || base.is_zero() {
            return base;
        }
        let factor = rand::thread_rng().gen_range(1.0 - self.jitter..=1.0 + self.jitter);
        base.mul_f64(factor.max(0.0))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quota {
    pub max_requests: Option<u64>,
    pub max_tokens: Option<u64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct GatewayStats {
    pub requests: u64,
    pub transport_calls: u64,
    pub retries: u64,
    pub tokens: u64,
}

pub struct Gateway {
    backend: Arc<dyn CompletionBackend>,
    retry: RetryPolicy,
    quota: Quota,
    admission: Semaphore,
    requests: AtomicU64,
    transport_calls: AtomicU64,
    retries: AtomicU64,
    tokens: AtomicU64,
}

impl Gateway {
    pub fn new(
        backend: Arc<dyn CompletionBackend>,
        retry: RetryPolicy,
        max_in_flight: usize,
    ) -> Self {
        Gateway {
            backend,
            retry,
            quota: Quota::default(),
            admission: Semaphore::new(max_in_flight.max(1)),
            requests: AtomicU64::new(0),
            transport_calls: AtomicU64::new(0),
            retries: AtomicU64::new(0),
            tokens: AtomicU64::new(0),
        }
    }

    pub fn with_quota(mut self, quota: Quota) -> Self {
        self.quota = quota;
        self
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            requests: self.requests.load(Ordering::SeqCst),
            transport_calls: self.transport_calls.load(Ordering::SeqCst),
            retries: self.retries.load(Ordering::SeqCst),
            tokens: self.tokens.load(Ordering::SeqCst),
        }
    }

    fn reserve(&self) -> Result<(), GatewayError> {
        if let Some(max) = self.quota.max_tokens {
            let used = self.tokens.load(Ordering::SeqCst);
            if used >= max {
                return Err(GatewayError::BudgetExceeded(format!(
                    "token quota {max} used ({used})"
                )));
            }
        }
        let n = self.requests.fetch_add(1, Ordering::SeqCst);
        if let Some(max) = self.quota.max_requests {
            if n >= max {
                self.requests.fetch_sub(1, Ordering::SeqCst);
                return Err(GatewayError::BudgetExceeded(format!(
                    "request quota {max} reached"
                )));
            }
        }
        Ok(())
    }

    pub async fn complete(
        &self,
        req: &CompletionRequest,
    ) -> Result<CompletionResponse, GatewayError> {
        req.params.validate()?;
        let _permit = self
            .admission
            .acquire()
            .await
            .expect("admission semaphore is never closed");
        self.reserve()?;

        let started = Instant::now();
        let mut retry = 0u32;
        loop {
            self.transport_calls.fetch_add(1, Ordering::SeqCst);
            match self.backend.complete(req).await {
                Ok(mut resp) => {
                    if resp.completions.len() != req.params.n_samples as usize {
                        return Err(GatewayError::MalformedResponse(format!(
                            "expected {} completions, got {}",
                            req.params.n_samples,
                            resp.completions.len()
                        )));
                    }
                    self.tokens.fetch_add(resp.usage.total(), Ordering::SeqCst);
                    resp.latency = started.elapsed();
                    return Ok(resp);
                }
                Err(BackendError::Transient(msg)) => {
                    if retry >= self.retry.max_retries {
                        return Err(GatewayError::BackendUnavailable {
                            retries: retry,
                            last_error: msg,
                        });
                    }
                    let delay = self.retry.jittered_delay(retry);
                    tracing::debug!(retry, ?delay, error = %msg, "transient backend failure");
                    retry += 1;
                    self.retries.fetch_add(1, Ordering::SeqCst);
                    tokio::time::sleep(delay).await;
                }
                Err(BackendError::Malformed(msg)) => {
                    return Err(GatewayError::MalformedResponse(msg))
                }
                Err(BackendError::Rejected(msg)) => return Err(GatewayError::Rejected(msg)),
                Err(BackendError::Unscripted(d)) => return Err(GatewayError::Unscripted(d)),
            }
        }
    }
}
