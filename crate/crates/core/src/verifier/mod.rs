//! Supervised pool of checker workers with a content-addressed verdict cache.

pub mod cache;
pub mod checker;
pub mod diagnostics;

use std::cmp::Ordering as CmpOrdering;
use std::collections::BinaryHeap;
use std::panic::AssertUnwindSafe;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use futures::FutureExt;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::{oneshot, Notify};

pub use cache::ResultCache;
pub use checker::{Checker, MockChecker, MockPattern, MockRule, ProcessChecker};
pub use diagnostics::{classify, parse_diagnostics, RawCheck, Termination};

use crate::record::{Verdict, VerificationOutcome};
use crate::statement::sha256_hex;

/// Header placed before every candidate.
pub const VERIFICATION_PREFIX: &str = include_str!("prefix.lean");

/// SHA-256 of [`VERIFICATION_PREFIX`], fixed when the prefix was transcribed.
pub const PREFIX_SHA256: &str = "371e7508ac3b84f8d9898ac1c2a4c3bfd2436bdeb157c574b7a06b77fbe0546e";

pub const DEFAULT_TOOLCHAIN: &str = "leanprover/lean4:v4.7.0-rc2";
pub const DEFAULT_MATHLIB_COMMIT: &str = "64528268b3c2cf578639bc479828882a9ecd3a82";

/// Prefix, one blank line, candidate.
pub fn assemble_source(candidate: &str) -> String {
    let mut s = String::with_capacity(VERIFICATION_PREFIX.len() + 1 + candidate.len());
    s.push_str(VERIFICATION_PREFIX);
    s.push('\n');
    s.push_str(candidate);
    s
}

/// Inverse of [`assemble_source`].
pub fn strip_prefix(source: &str) -> Option<&str> {
    source.strip_prefix(VERIFICATION_PREFIX)?.strip_prefix('\n')
}

pub fn prefix_digest() -> String {
    sha256_hex(VERIFICATION_PREFIX.as_bytes())
}

pub fn check_prefix_digest() -> Result<(), VerifierError> {
    let found = prefix_digest();
    if found != PREFIX_SHA256 {
        return Err(VerifierError::PrefixMismatch {
            expected: PREFIX_SHA256.into(),
            found,
        });
    }
    Ok(())
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VerifierError {
    #[error("invalid verifier config: {0}")]
    InvalidConfig(String),
    #[error("verification prefix digest mismatch: expected {expected}, found {found}")]
    PrefixMismatch { expected: String, found: String },
    #[error("verifier pool unavailable: {0}")]
    PoolUnavailable(String),
    #[error("verifier pool shut down")]
    ShutDown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifierConfig {
    /// Executable and arguments; `{file}` is replaced by the source path.
    pub checker_command: Vec<String>,
    pub pool_size: usize,
    pub timeout_s: f64,
    pub toolchain_tag: String,
    pub mathlib_commit: String,
    pub cache_path: Option<PathBuf>,
    /// Directory the checker runs in (the Lean project root).
    pub working_dir: Option<PathBuf>,
    /// Environment variables forwarded to the checker; everything else is cleared.
    pub env_passthrough: Vec<String>,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        VerifierConfig {
            checker_command: ["lake", "env", "lean", "{file}"].map(String::from).to_vec(),
            pool_size: 4,
            timeout_s: 300.0,
            toolchain_tag: DEFAULT_TOOLCHAIN.into(),
            mathlib_commit: DEFAULT_MATHLIB_COMMIT.into(),
            cache_path: None,
            working_dir: None,
            env_passthrough: ["PATH", "HOME", "ELAN_HOME", "LEAN_PATH", "LAKE_HOME"]
                .map(String::from)
                .to_vec(),
        }
    }
}

impl VerifierConfig {
    pub fn validate(&self) -> Result<(), VerifierError> {
        if self.pool_size == 0 {
            return Err(VerifierError::InvalidConfig(
                "pool_size must be at least 1".into(),
            ));
        }
        if !(self.timeout_s.is_finite() && self.timeout_s > 0.0) {
            return Err(VerifierError::InvalidConfig(format!(
                "timeout_s must be positive, got {}",
                self.timeout_s
            )));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationJob {
    pub source: String,
    pub content_key: String,
    /// Higher runs first.
    pub priority: i64,
}

impl VerificationJob {
    /// Job for an already assembled source.
    pub fn new(source: impl Into<String>) -> Self {
        let source = source.into();
        let content_key = sha256_hex(source.as_bytes());
        VerificationJob {
            source,
            content_key,
            priority: 0,
        }
    }

    /// Job for a declaration with proof; the prefix is added.
    pub fn for_candidate(candidate: &str) -> Self {
        Self::new(assemble_source(candidate))
    }

    pub fn with_priority(mut self, priority: i64) -> Self {
        self.priority = priority;
        self
    }
}

#[async_trait]
pub trait ProofVerifier: Send + Sync {
    async fn verify(&self, job: VerificationJob) -> Result<VerificationOutcome, VerifierError>;
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PoolStats {
    pub jobs: u64,
    pub proved: u64,
    pub failed: u64,
    pub timeouts: u64,
    pub crashes: u64,
    /// Jobs dropped by their caller before a worker picked them up.
    pub cancelled: u64,
    pub cache_hits: u64,
    pub in_flight: u64,
    pub launches: u64,
    pub respawns: u64,
    pub peak_processes: u64,
    pub running: u64,
    /// Seconds, over finished non-cached jobs.
    pub mean_wall_time: f64,
    #[serde(skip)]
    total_wall_time: f64,
}

impl PoolStats {
    pub fn finished(&self) -> u64 {
        self.proved + self.failed + self.timeouts + self.crashes
    }

    fn record(&mut self, verdict: Verdict) {
        match verdict {
            Verdict::Proved => self.proved += 1,
            Verdict::Failed => self.failed += 1,
            Verdict::Timeout => self.timeouts += 1,
            Verdict::VerifierCrash => self.crashes += 1,
        }
    }
}

struct Queued {
    job: VerificationJob,
    seq: u64,
    reply: oneshot::Sender<VerificationOutcome>,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == CmpOrdering::Equal
    }
}
impl Eq for Queued {}
impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<CmpOrdering> {
        Some(self.cmp(other))
    }
}
impl Ord for Queued {
    fn cmp(&self, other: &Self) -> CmpOrdering {
        self.job
            .priority
            .cmp(&other.job.priority)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

struct Inner {
    cfg: VerifierConfig,
    checker: Arc<dyn Checker>,
    cache: Arc<ResultCache>,
    queue: Mutex<(BinaryHeap<Queued>, u64)>,
    notify: Notify,
    stats: Mutex<PoolStats>,
    shutdown: AtomicBool,
}

/// Fixed set of `pool_size` workers draining a priority queue. Each job runs
/// in a fresh checker process, so a crash never outlives its job.
pub struct VerifierPool {
    inner: Arc<Inner>,
}

impl VerifierPool {
    /// Validates config, checks the prefix digest, probes the checker and
    /// spawns the workers. Must be called inside a tokio runtime.
    pub fn start(
        cfg: VerifierConfig,
        checker: Arc<dyn Checker>,
        cache: Arc<ResultCache>,
    ) -> Result<Self, VerifierError> {
        cfg.validate()?;
        check_prefix_digest()?;
        checker.preflight()?;
        let inner = Arc::new(Inner {
            checker,
            cache,
            queue: Mutex::new((BinaryHeap::new(), 0)),
            notify: Notify::new(),
            stats: Mutex::new(PoolStats::default()),
            shutdown: AtomicBool::new(false),
            cfg,
        });
        for worker in 0..inner.cfg.pool_size {
            let inner = Arc::clone(&inner);
            tokio::spawn(async move { worker_loop(inner, worker).await });
        }
        Ok(VerifierPool { inner })
    }

    /// Pool over the mock checker with an in-memory cache.
    pub fn mock(pool_size: usize, rules: Vec<MockRule>) -> Result<Self, VerifierError> {
        let cfg = VerifierConfig {
            pool_size,
            ..VerifierConfig::default()
        };
        Self::start(
            cfg,
            Arc::new(MockChecker::new(rules)),
            Arc::new(ResultCache::in_memory()),
        )
    }

    pub fn config(&self) -> &VerifierConfig {
        &self.inner.cfg
    }

    pub fn stats(&self) -> PoolStats {
        self.inner.stats.lock().expect("stats lock").clone()
    }

    pub fn cache(&self) -> &Arc<ResultCache> {
        &self.inner.cache
    }

    pub fn shutdown(&self) {
        self.inner.shutdown.store(true, Ordering::SeqCst);
        self.inner.notify.notify_waiters();
    }
}

impl Drop for VerifierPool {
    fn drop(&mut self) {
        self.shutdown();
    }
}

#[async_trait]
impl ProofVerifier for VerifierPool {
    async fn verify(&self, job: VerificationJob) -> Result<VerificationOutcome, VerifierError> {
        let inner = &self.inner;
        if inner.shutdown.load(Ordering::SeqCst) {
            return Err(VerifierError::ShutDown);
        }
        if let Some(hit) = inner.cache.get(&job.content_key) {
            let mut s = inner.stats.lock().expect("stats lock");
            s.jobs += 1;
            s.cache_hits += 1;
            s.record(hit.verdict);
            return Ok(hit);
        }
        let (tx, rx) = oneshot::channel();
        {
            let mut s = inner.stats.lock().expect("stats lock");
            s.jobs += 1;
            s.in_flight += 1;
        }
        {
            let mut q = inner.queue.lock().expect("queue lock");
            let seq = q.1;
            q.1 += 1;
            q.0.push(Queued {
                job,
                seq,
                reply: tx,
            });
        }
        inner.notify.notify_one();
        rx.await.map_err(|_| VerifierError::ShutDown)
    }
}

async fn worker_loop(inner: Arc<Inner>, worker: usize) {
    loop {
        let next = inner.queue.lock().expect("queue lock").0.pop();
        let Some(item) = next else {
            if inner.shutdown.load(Ordering::SeqCst) {
                break;
            }
            inner.notify.notified().await;
            continue;
        };
        // Another worker may be idle while more work remains.
        if !inner.queue.lock().expect("queue lock").0.is_empty() {
            inner.notify.notify_one();
        }
        if item.reply.is_closed() {
            let mut s = inner.stats.lock().expect("stats lock");
            s.cancelled += 1;
            s.in_flight -= 1;
            continue;
        }
        let outcome = run_job(&inner, &item.job, worker).await;
        let _ = item.reply.send(outcome);
    }
    // Jobs left behind at shutdown are answered with `ShutDown` when their
    // senders drop here.
    let mut q = inner.queue.lock().expect("queue lock");
    let left = q.0.len() as u64;
    q.0.clear();
    if left > 0 {
        let mut s = inner.stats.lock().expect("stats lock");
        s.cancelled += left;
        s.in_flight -= left;
    }
}

async fn run_job(inner: &Inner, job: &VerificationJob, worker: usize) -> VerificationOutcome {
    {
        let mut s = inner.stats.lock().expect("stats lock");
        s.launches += 1;
        s.running += 1;
        s.peak_processes = s.peak_processes.max(s.running);
    }
    let started = tokio::time::Instant::now();
    let run = AssertUnwindSafe(inner.checker.run(&job.source, inner.cfg.timeout()));
    let raw = match run.catch_unwind().await {
        Ok(raw) => raw,
        Err(_) => RawCheck {
            termination: Termination::SpawnFailed("checker panicked".into()),
            output: String::new(),
            wall_time: started.elapsed(),
        },
    };
    let (verdict, diagnostics) = classify(&raw);
    let trace_lines = raw.output.lines().filter(|l| l.contains("[aesop")).count();
    if trace_lines > 0 {
        tracing::debug!(worker, trace_lines, "checker emitted aesop traces");
    }
    let outcome = VerificationOutcome {
        verdict,
        diagnostics,
        wall_time: raw.wall_time.as_secs_f64(),
        from_cache: false,
    };
    inner.cache.put(&job.content_key, &outcome);
    let mut s = inner.stats.lock().expect("stats lock");
    s.running -= 1;
    s.in_flight -= 1;
    s.record(verdict);
    s.total_wall_time += outcome.wall_time;
    let fresh = s.finished() - s.cache_hits;
    s.mean_wall_time = s.total_wall_time / fresh as f64;
    if verdict == Verdict::VerifierCrash {
        s.respawns += 1;
        tracing::warn!(worker, key = %job.content_key, termination = ?raw.termination, "checker crashed; worker respawned");
    }
    outcome
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;

    #[test]
    fn prefix_shape() {
        check_prefix_digest().unwrap();
        let src = assemble_source("example : True := by trivial");
        assert!(src.starts_with("import Mathlib.Algebra.Algebra.Basic\n"));
        assert!(src.contains("\nset_option maxHeartbeats 0\n"));
        assert!(src.contains("\nopen Nat Real Rat BigOperators\n\nexample : True := by trivial"));
        assert_eq!(strip_prefix(&src), Some("example : True := by trivial"));
        assert_eq!(strip_prefix("example"), None);
    }

    #[test]
    fn job_keys_are_source_digests() {
        let a = VerificationJob::for_candidate("example : True := by trivial");
        let b =
            VerificationJob::new(assemble_source("example : True := by trivial")).with_priority(3);
        assert_eq!(a.content_key, b.content_key);
        assert_ne!(
            a.content_key,
            VerificationJob::for_candidate("example : True := by simp").content_key
        );
    }

    #[test]
    fn config_validation() {
        assert!(VerifierConfig::default().validate().is_ok());
        let bad = VerifierConfig {
            pool_size: 0,
            ..Default::default()
        };
        assert!(matches!(
            bad.validate(),
            Err(VerifierError::InvalidConfig(_))
        ));
        let bad = VerifierConfig {
            timeout_s: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[tokio::test]
    async fn second_submission_hits_cache() {
        let checker = Arc::new(MockChecker::default());
        let pool = VerifierPool::start(
            VerifierConfig::default(),
            checker.clone(),
            Arc::new(ResultCache::in_memory()),
        )
        .unwrap();
        assert_eq!(pool.stats(), PoolStats::default());
        let job = VerificationJob::for_candidate("example : True := by trivial");
        let first = pool.verify(job.clone()).await.unwrap();
        assert_eq!(first.verdict, Verdict::Proved);
        assert!(!first.from_cache);
        let second = pool.verify(job).await.unwrap();
        assert!(second.from_cache);
        assert_eq!(second.verdict, Verdict::Proved);
        assert_eq!(checker.launches(), 1);
        let s = pool.stats();
        assert_eq!((s.jobs, s.proved, s.cache_hits, s.launches), (2, 2, 1, 1));
    }

    #[tokio::test]
    async fn timeouts_and_crashes_are_not_cached() {
        let rules = vec![
            MockRule::contains("slow", Verdict::Proved).with_delay(10_000),
            MockRule::contains("boom", Verdict::VerifierCrash),
        ];
        let cfg = VerifierConfig {
            timeout_s: 0.05,
            pool_size: 2,
            ..Default::default()
        };
        let checker = Arc::new(MockChecker::new(rules));
        let pool =
            VerifierPool::start(cfg, checker.clone(), Arc::new(ResultCache::in_memory())).unwrap();
        for _ in 0..2 {
            let o = pool
                .verify(VerificationJob::for_candidate("slow"))
                .await
                .unwrap();
            assert_eq!(o.verdict, Verdict::Timeout);
            let o = pool
                .verify(VerificationJob::for_candidate("boom"))
                .await
                .unwrap();
            assert_eq!(o.verdict, Verdict::VerifierCrash);
        }
        assert_eq!(checker.launches(), 4);
        let s = pool.stats();
        assert_eq!(
            (s.timeouts, s.crashes, s.respawns, s.cache_hits),
            (2, 2, 2, 0)
        );
        // The pool keeps serving after crashes.
        let o = pool
            .verify(VerificationJob::for_candidate(
                "example : True := by trivial",
            ))
            .await
            .unwrap();
        assert_eq!(o.verdict, Verdict::Proved);
    }

    struct Panicky(AtomicUsize);

    #[async_trait]
    impl Checker for Panicky {
        async fn run(&self, _source: &str, _timeout: Duration) -> RawCheck {
            if self.0.fetch_add(1, Ordering::SeqCst) == 0 {
                panic!("checker bug");
            }
            RawCheck {
                termination: Termination::Exited(0),
                output: String::new(),
                wall_time: Duration::ZERO,
            }
        }
    }

    #[tokio::test]
    async fn panicking_checker_is_a_crash() {
        let cfg = VerifierConfig {
            pool_size: 1,
            ..Default::default()
        };
        let pool = VerifierPool::start(
            cfg,
            Arc::new(Panicky(AtomicUsize::new(0))),
            Arc::new(ResultCache::in_memory()),
        )
        .unwrap();
        let a = pool
            .verify(VerificationJob::for_candidate("a"))
            .await
            .unwrap();
        assert_eq!(a.verdict, Verdict::VerifierCrash);
        let b = pool
            .verify(VerificationJob::for_candidate("b"))
            .await
            .unwrap();
        assert_eq!(b.verdict, Verdict::Proved);
    }

    #[tokio::test]
    async fn priority_order() {
        struct Recorder(Mutex<Vec<String>>);
        #[async_trait]
        impl Checker for Recorder {
            async fn run(&self, source: &str, _timeout: Duration) -> RawCheck {
                self.0
                    .lock()
                    .unwrap()
                    .push(strip_prefix(source).unwrap().to_string());
                tokio::time::sleep(Duration::from_millis(5)).await;
                RawCheck {
                    termination: Termination::Exited(0),
                    output: String::new(),
                    wall_time: Duration::ZERO,
                }
            }
        }
        let rec = Arc::new(Recorder(Mutex::new(vec![])));
        let cfg = VerifierConfig {
            pool_size: 1,
            ..Default::default()
        };
        let pool = Arc::new(
            VerifierPool::start(cfg, rec.clone(), Arc::new(ResultCache::in_memory())).unwrap(),
        );
        // Occupy the single worker, then queue jobs with mixed priorities.
        let blocker = {
            let pool = pool.clone();
            tokio::spawn(async move { pool.verify(VerificationJob::for_candidate("first")).await })
        };
        tokio::time::sleep(Duration::from_millis(1)).await;
        let mut handles = vec![];
        for (name, prio) in [("low", 0), ("high", 5), ("mid", 2)] {
            let pool = pool.clone();
            handles.push(tokio::spawn(async move {
                pool.verify(VerificationJob::for_candidate(name).with_priority(prio))
                    .await
            }));
            tokio::task::yield_now().await;
        }
        blocker.await.unwrap().unwrap();
        for h in handles {
            h.await.unwrap().unwrap();
        }
        assert_eq!(*rec.0.lock().unwrap(), ["first", "high", "mid", "low"]);
    }
}
