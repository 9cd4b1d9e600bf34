//! Scripted completion backend.
//!
//! A script is line-delimited JSON. Each line maps a prompt to an ordered
//! completion list:
//!
//! ```text
//! {"prompt_sha256": "<hex digest>", "completions": ["proof A", "proof B"]}
//! {"prompt_contains": "Assessment", "completions": ["Assessment: good"]}
//! {"default": true, "completions": ["sorry"]}
//! ```
//!
//! Digest entries are consulted first, then substring entries in file order,
//! then the default. A request for `n` samples with seed `s` receives
//! `list[(s + i) % len]` for `i in 0..n`, so repeated calls are reproducible
//! and the i-th proof attempt (seeded with its index) sees the i-th entry.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    prompt_digest, BackendError, CompletionBackend, CompletionRequest, CompletionResponse,
    TokenUsage,
};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScriptEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_contains: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub default: bool,
    pub completions: Vec<String>,
}

impl MockScriptEntry {
    pub fn for_prompt(prompt: &str, completions: Vec<String>) -> Self {
        MockScriptEntry {
            prompt_sha256: Some(prompt_digest(prompt)),
            completions,
            ..Default::default()
        }
    }
}

#[derive(Debug, Error)]
pub enum MockScriptError {
    #[error("reading mock script: {0}")]
    Io(#[from] std::io::Error),
    #[error("mock script line {line}: {message}")]
    Line { line: usize, message: String },
}

#[derive(Debug, Default)]
pub struct MockBackend {
    by_digest: HashMap<String, Vec<String>>,
    by_substring: Vec<(String, Vec<String>)>,
    fallback: Option<Vec<String>>,
    calls: AtomicU64,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = MockScriptEntry>) -> Self {
        let mut mock = MockBackend::new();
        for e in entries {
            mock.add(e);
        }
        mock
    }

    pub fn add(&mut self, entry: MockScriptEntry) {
        if entry.default {
            self.fallback = Some(entry.completions);
        } else if let Some(d) = entry.prompt_sha256 {
            self.by_digest.insert(d, entry.completions);
        } else if let Some(s) = entry.prompt_contains {
            self.by_substring.push((s, entry.completions));
        }
    }

    pub fn script(&mut self, prompt: &str, completions: Vec<String>) {
        self.add(MockScriptEntry::for_prompt(prompt, completions));
    }

    pub fn parse_script(text: &str) -> Result<Self, MockScriptError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: MockScriptEntry =
                serde_json::from_str(line).map_err(|e| MockScriptError::Line {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            if !entry.default && entry.prompt_sha256.is_none() && entry.prompt_contains.is_none() {
                return Err(MockScriptError::Line {
                    line: i + 1,
                    message: "entry needs prompt_sha256, prompt_contains or default".into(),
                });
            }
            entries.push(entry);
        }
        Ok(Self::from_entries(entries))
    }

    pub fn load(path: &Path) -> Result<Self, MockScriptError> {
        Self::parse_script(&std::fs::read_to_string(path)?)
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    fn lookup(&self, prompt: &str) -> Result<&[String], BackendError> {
        let digest = prompt_digest(prompt);
        if let Some(list) = self.by_digest.get(&digest) {
            return Ok(list);
        }
        if let Some((_, list)) = self
            .by_substring
            .iter()
            .find(|(s, _)| prompt.contains(s.as_str()))
        {
            return Ok(list);
        }
        self.fallback
            .as_deref()
            .ok_or(BackendError::Unscripted(digest))
    }
}

#[async_trait]
impl CompletionBackend for MockBackend {
    async fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let list = self.lookup(&req.prompt)?;
        if list.is_empty() {
            return Err(BackendError::Malformed(
                "scripted completion list is empty".into(),
            ));
        }
        let offset = req.seed.unwrap_or(0) as usize;
        let completions: Vec<String> = (0..req.params.n_samples as usize)
            .map(|i| list[(offset + i) % list.len()].clone())
            .collect();
        let completion_tokens = completions
            .iter()
            .map(|c| c.split_whitespace().count() as u64)
            .sum();
        Ok(CompletionResponse {
            completions,
            usage: TokenUsage {
                prompt_tokens: req.prompt.split_whitespace().count() as u64,
                completion_tokens,
            },
            latency: Duration::ZERO,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Gateway, RetryPolicy, SamplingParams};
    use std::sync::Arc;

    #[tokio::test]
    async fn scripted_completions_in_order() {
        let mut mock = MockBackend::new();
        mock.script("prove it", vec!["proof A".into(), "proof B".into()]);
        let gw = Gateway::new(Arc::new(mock), RetryPolicy::no_delay(0), 1);
        let req = CompletionRequest::new("prove it", SamplingParams::sampled(1.0, 64, 2), "m");
        let resp = gw.complete(&req).await.unwrap();
        assert_eq!(resp.completions, vec!["proof A", "proof B"]);
    }

    #[tokio::test]
    async fn greedy_is_repeatable() {
        let mut mock = MockBackend::new();
        mock.script("q", vec!["x".into(), "y".into()]);
        let gw = Gateway::new(Arc::new(mock), RetryPolicy::no_delay(0), 1);
        let req = CompletionRequest::new("q", SamplingParams::greedy(8), "m");
        let a = gw.complete(&req).await.unwrap().completions;
        let b = gw.complete(&req).await.unwrap().completions;
        assert_eq!(a, vec!["x"]);
        assert_eq!(a, b);
    }

    #[tokio::test]
    async fn seed_selects_entry() {
        let mut mock = MockBackend::new();
        mock.script("q", vec!["a".into(), "b".into(), "c".into()]);
        let req = CompletionRequest::new("q", SamplingParams::greedy(8), "m").with_seed(4);
        assert_eq!(mock.complete(&req).await.unwrap().completions, vec!["b"]);
    }

    #[test]
    fn script_file_lookup_order() {
        let text = format!(
            "{}\n{}\n\n{}\n",
            r#"{"prompt_contains": "needle", "completions": ["sub"]}"#,
            serde_json::to_string(&MockScriptEntry::for_prompt(
                "exact needle",
                vec!["digest".into()]
            ))
            .unwrap(),
            r#"{"default": true, "completions": ["fallback"]}"#,
        );
        let mock = MockBackend::parse_script(&text).unwrap();
        assert_eq!(mock.lookup("exact needle").unwrap(), ["digest"]);
        assert_eq!(mock.lookup("a needle here").unwrap(), ["sub"]);
        assert_eq!(mock.lookup("other").unwrap(), ["fallback"]);
        assert!(MockBackend::parse_script(r#"{"completions": []}"#).is_err());
        assert!(MockBackend::new().lookup("x").is_err());
    }
}
