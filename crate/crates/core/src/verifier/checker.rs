//! Checker backends: an external process per job, or a pure-logic mock.

use std::path::{Path, PathBuf};
use std::process::Stdio;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use tokio::io::AsyncReadExt;
use tokio::process::Command;
use tokio::time::Instant;

use super::diagnostics::{RawCheck, Termination};
use super::{strip_prefix, VerifierConfig, VerifierError};
use crate::record::Verdict;
use crate::statement::normalize_whitespace;

/// Placeholder in the command template replaced by the source file path.
pub const FILE_PLACEHOLDER: &str = "{file}";

#[async_trait]
pub trait Checker: Send + Sync {
    /// Checks `source`, giving up after `timeout`.
    async fn run(&self, source: &str, timeout: Duration) -> RawCheck;

    /// Startup probe; an error makes the pool unavailable.
    fn preflight(&self) -> Result<(), VerifierError> {
        Ok(())
    }
}

/// Runs a command such as `lake env lean {file}` on a temporary source file.
pub struct ProcessChecker {
    command: Vec<String>,
    working_dir: Option<PathBuf>,
    env_passthrough: Vec<String>,
    scratch_dir: PathBuf,
    launches: AtomicU64,
}

impl ProcessChecker {
    pub fn new(command: Vec<String>) -> Self {
        ProcessChecker {
            command,
            working_dir: None,
            env_passthrough: VerifierConfig::default().env_passthrough,
            scratch_dir: std::env::temp_dir(),
            launches: AtomicU64::new(0),
        }
    }

    pub fn from_config(cfg: &VerifierConfig) -> Self {
        ProcessChecker {
            command: cfg.checker_command.clone(),
            working_dir: cfg.working_dir.clone(),
            env_passthrough: cfg.env_passthrough.clone(),
            scratch_dir: std::env::temp_dir(),
            launches: AtomicU64::new(0),
        }
    }

    pub fn with_scratch_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.scratch_dir = dir.into();
        self
    }

    pub fn launches(&self) -> u64 {
        self.launches.load(Ordering::SeqCst)
    }

    fn build_command(&self, file: &Path) -> Command {
        let file = file.to_string_lossy();
        let mut args: Vec<String> = self
            .command
            .iter()
            .map(|a| a.replace(FILE_PLACEHOLDER, &file))
            .collect();
        if !self.command.iter().any(|a| a.contains(FILE_PLACEHOLDER)) {
            args.push(file.into_owned());
        }
        let mut cmd = Command::new(&args[0]);
        cmd.args(&args[1..])
            .env_clear()
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .kill_on_drop(true)
            .process_group(0);
        for var in &self.env_passthrough {
            if let Ok(v) = std::env::var(var) {
                cmd.env(var, v);
            }
        }
        if let Some(dir) = &self.working_dir {
            cmd.current_dir(dir);
        }
        cmd
    }
}

fn resolve_executable(program: &str) -> Option<PathBuf> {
    let p = Path::new(program);
    if p.components().count() > 1 {
        return p.is_file().then(|| p.to_path_buf());
    }
    std::env::var_os("PATH").and_then(|paths| {
        std::env::split_paths(&paths)
            .map(|dir| dir.join(program))
            .find(|candidate| candidate.is_file())
    })
}

fn kill_group(pid: Option<u32>) {
    if let Some(pid) = pid {
        // The child leads its own process group; take its descendants down too.
        unsafe {
            libc::kill(-(pid as i32), libc::SIGKILL);
        }
    }
}

#[async_trait]
impl Checker for ProcessChecker {
    fn preflight(&self) -> Result<(), VerifierError> {
        let program = self
            .command
            .first()
            .ok_or_else(|| VerifierError::PoolUnavailable("empty checker_command".into()))?;
        if resolve_executable(program).is_none() {
            return Err(VerifierError::PoolUnavailable(format!(
                "checker executable {program:?} not found"
            )));
        }
        if !self.scratch_dir.is_dir() {
            return Err(VerifierError::PoolUnavailable(format!(
                "scratch directory {} does not exist",
                self.scratch_dir.display()
            )));
        }
        Ok(())
    }

    async fn run(&self, source: &str, timeout: Duration) -> RawCheck {
        let started = Instant::now();
        let spawn_failed = |msg: String| RawCheck {
            termination: Termination::SpawnFailed(msg),
            output: String::new(),
            wall_time: started.elapsed(),
        };
        let file = match tempfile::Builder::new()
            .prefix("synthproof-")
            .suffix(".lean")
            .tempfile_in(&self.scratch_dir)
        {
            Ok(f) => f,
            Err(e) => return spawn_failed(format!("creating source file: {e}")),
        };
        if let Err(e) = std::fs::write(file.path(), source) {
            return spawn_failed(format!("writing source file: {e}"));
        }

        self.launches.fetch_add(1, Ordering::SeqCst);
        let mut child = match self.build_command(file.path()).spawn() {
            Ok(c) => c,
            Err(e) => return spawn_failed(format!("spawning checker: {e}")),
        };
        let pid = child.id();
        let mut stdout = child.stdout.take().expect("piped stdout");
        let mut stderr = child.stderr.take().expect("piped stderr");
        let out_task = tokio::spawn(async move {
            let mut buf = Vec::new();
            let _ = stdout.read_to_end(&mut buf).await;
            buf
        });
        let err_task = tokio::spawn(async move {
            let mut buf = Vec::new();
            let _ = stderr.read_to_end(&mut buf).await;
            buf
        });

        let termination = match tokio::time::timeout(timeout, child.wait()).await {
            Ok(Ok(status)) => match status.code() {
                Some(code) => Termination::Exited(code),
                None => {
                    use std::os::unix::process::ExitStatusExt;
                    Termination::Signaled(status.signal())
                }
            },
            Ok(Err(e)) => Termination::SpawnFailed(format!("waiting for checker: {e}")),
            Err(_) => {
                kill_group(pid);
                let _ = child.wait().await;
                Termination::TimedOut
            }
        };
        // Grandchildren may still hold the pipes open after a crash.
        kill_group(pid);
        let mut output = String::from_utf8_lossy(&out_task.await.unwrap_or_default()).into_owned();
        let err = err_task.await.unwrap_or_default();
        if !err.is_empty() {
            if !output.is_empty() && !output.ends_with('\n') {
                output.push('\n');
            }
            output.push_str(&String::from_utf8_lossy(&err));
        }
        RawCheck {
            termination,
            output,
            wall_time: started.elapsed(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockPattern {
    /// The candidate (source after the prefix) contains this text.
    Contains(String),
    /// The whitespace-normalized candidate equals this text, normalized.
    Equals(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(flatten)]
    pub pattern: MockPattern,
    pub verdict: Verdict,
    #[serde(default)]
    pub delay_ms: u64,
}

impl MockRule {
    pub fn contains(text: impl Into<String>, verdict: Verdict) -> Self {
        MockRule {
            pattern: MockPattern::Contains(text.into()),
            verdict,
            delay_ms: 0,
        }
    }

    pub fn equals(text: impl Into<String>, verdict: Verdict) -> Self {
        MockRule {
            pattern: MockPattern::Equals(text.into()),
            verdict,
            delay_ms: 0,
        }
    }

    pub fn with_delay(mut self, ms: u64) -> Self {
        self.delay_ms = ms;
        self
    }

    fn matches(&self, candidate: &str) -> bool {
        match &self.pattern {
            MockPattern::Contains(s) => candidate.contains(s.as_str()),
            MockPattern::Equals(s) => normalize_whitespace(candidate) == normalize_whitespace(s),
        }
    }
}

/// Deterministic stand-in for a real checker. Rules are tried in order; the
/// last built-in rule accepts `example : True := by trivial`; anything else
/// fails.
#[derive(Debug)]
pub struct MockChecker {
    rules: Vec<MockRule>,
    launches: AtomicU64,
}

impl Default for MockChecker {
    fn default() -> Self {
        MockChecker::new(Vec::new())
    }
}

impl MockChecker {
    pub fn new(mut rules: Vec<MockRule>) -> Self {
        rules.push(MockRule::equals(
            "example : True := by\n  trivial",
            Verdict::Proved,
        ));
        rules.push(MockRule::equals(
            "example : True := by trivial",
            Verdict::Proved,
        ));
        MockChecker {
            rules,
            launches: AtomicU64::new(0),
        }
    }

    /// Line-delimited JSON rules, e.g. `{"contains": "simpa using h₀ 1", "verdict": "proved"}`.
    pub fn parse_rules(text: &str) -> Result<Vec<MockRule>, serde_json::Error> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect()
    }

    pub fn launches(&self) -> u64 {
        self.launches.load(Ordering::SeqCst)
    }

    /// Pure decision, without delay.
    pub fn decide(&self, source: &str) -> (Verdict, u64) {
        let candidate = strip_prefix(source).unwrap_or(source);
        self.rules
            .iter()
            .find(|r| r.matches(candidate))
            .map_or((Verdict::Failed, 0), |r| (r.verdict, r.delay_ms))
    }
}

#[async_trait]
impl Checker for MockChecker {
    async fn run(&self, source: &str, timeout: Duration) -> RawCheck {
        self.launches.fetch_add(1, Ordering::SeqCst);
        let started = Instant::now();
        let (verdict, delay_ms) = self.decide(source);
        let delay = Duration::from_millis(delay_ms);
        if delay > timeout {
            tokio::time::sleep(timeout).await;
            return RawCheck {
                termination: Termination::TimedOut,
                output: String::new(),
                wall_time: started.elapsed(),
            };
        }
        if !delay.is_zero() {
            tokio::time::sleep(delay).await;
        }
        let (termination, output) = match verdict {
            Verdict::Proved => (Termination::Exited(0), String::new()),
            Verdict::Failed => (
                Termination::Exited(1),
                "mock.lean:1:0: error: mock checker rejected the proof\n".to_string(),
            ),
            Verdict::Timeout => (Termination::TimedOut, String::new()),
            Verdict::VerifierCrash => (Termination::Signaled(Some(libc::SIGKILL)), String::new()),
        };
        RawCheck {
            termination,
            output,
            wall_time: started.elapsed(),
        }
    }
}
