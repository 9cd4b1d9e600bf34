//! Content-addressed verdict cache with an append-only JSONL log.
//!
//! The first log line records the toolchain identity; entries written under a
//! different toolchain are ignored at load. Only `proved` and `failed`
//! verdicts are stored.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::record::{Diagnostic, Verdict, VerificationOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CacheHeader {
    schema: String,
    toolchain: String,
    mathlib: String,
}

const CACHE_SCHEMA: &str = "synthproof.verifier-cache.v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub content_key: String,
    pub verdict: Verdict,
    pub wall_time: f64,
    #[serde(default)]
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Default)]
pub struct ResultCache {
    entries: Mutex<HashMap<String, CacheRecord>>,
    log: Option<Mutex<File>>,
}

impl ResultCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) the log at `path` and loads matching entries.
    pub fn open(path: &Path, toolchain: &str, mathlib: &str) -> std::io::Result<Self> {
        let header = CacheHeader {
            schema: CACHE_SCHEMA.into(),
            toolchain: toolchain.into(),
            mathlib: mathlib.into(),
        };
        let mut entries = HashMap::new();
        let mut fresh = true;
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            let mut lines = reader.lines();
            if let Some(first) = lines.next() {
                fresh = false;
                let stored: Option<CacheHeader> = serde_json::from_str(&first?).ok();
                if stored.as_ref() == Some(&header) {
                    for line in lines {
                        // A torn final line from an interrupted write is skipped.
                        if let Ok(rec) = serde_json::from_str::<CacheRecord>(&line?) {
                            entries.insert(rec.content_key.clone(), rec);
                        }
                    }
                } else {
                    tracing::warn!(path = %path.display(), "verifier cache written by another toolchain; starting empty");
                    std::fs::remove_file(path)?;
                    fresh = true;
                }
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        if fresh {
            writeln!(
                file,
                "{}",
                serde_json::to_string(&header).expect("header serializes")
            )?;
        }
        Ok(ResultCache {
            entries: Mutex::new(entries),
            log: Some(Mutex::new(file)),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<VerificationOutcome> {
        self.entries
            .lock()
            .expect("cache lock")
            .get(key)
            .map(|r| VerificationOutcome {
                verdict: r.verdict,
                diagnostics: r.diagnostics.clone(),
                wall_time: r.wall_time,
                from_cache: true,
            })
    }

    /// Stores cacheable outcomes; last writer wins on identical keys.
    pub fn put(&self, key: &str, outcome: &VerificationOutcome) {
        if !outcome.verdict.is_cacheable() {
            return;
        }
        let rec = CacheRecord {
            content_key: key.to_string(),
            verdict: outcome.verdict,
            wall_time: outcome.wall_time,
            diagnostics: outcome.diagnostics.clone(),
        };
        let mut entries = self.entries.lock().expect("cache lock");
        if let Some(log) = &self.log {
            let line = serde_json::to_string(&rec).expect("cache record serializes");
            let mut f = log.lock().expect("cache log lock");
            if let Err(e) = writeln!(f, "{line}") {
                tracing::warn!(error = %e, "failed to append to verifier cache log");
            }
        }
        entries.insert(rec.content_key.clone(), rec);
    }

    /// Counts of cached verdicts, for reporting.
    pub fn summary(&self) -> HashMap<Verdict, usize> {
        let mut out = HashMap::new();
        for r in self.entries.lock().expect("cache lock").values() {
            *out.entry(r.verdict).or_default() += 1;
        }
        out
    }
}
