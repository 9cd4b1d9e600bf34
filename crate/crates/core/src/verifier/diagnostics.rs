//! Checker output parsing and verdict classification.

use std::sync::OnceLock;
use std::time::Duration;

use regex::Regex;

use crate::record::{Diagnostic, Severity, Verdict};

/// How a checker run ended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Termination {
    Exited(i32),
    /// Killed by a signal (or exit status unavailable).
    Signaled(Option<i32>),
    TimedOut,
    SpawnFailed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawCheck {
    pub termination: Termination,
    /// Combined stdout and stderr.
    pub output: String,
    pub wall_time: Duration,
}

const SORRY_WARNING: &str = "declaration uses 'sorry'";

fn header_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^(?:[^\s:][^:]*):(\d+):(\d+):\s*(error|warning|information|info)\s*:\s?(.*)$")
            .expect("diagnostic header regex")
    })
}

/// Splits checker output into messages of the form `<file>:<line>:<col>: <severity>: text`.
/// Lines that do not start a message continue the previous one; leading
/// unattached lines become one informational message.
pub fn parse_diagnostics(output: &str) -> Vec<Diagnostic> {
    let mut out: Vec<Diagnostic> = Vec::new();
    for line in output.lines() {
        if let Some(c) = header_re().captures(line) {
            let severity = match &c[3] {
                "error" => Severity::Error,
                "warning" => Severity::Warning,
                _ => Severity::Info,
            };
            out.push(Diagnostic {
                severity,
                line: c[1].parse().ok(),
                column: c[2].parse().ok(),
                message: c[4].to_string(),
            });
        } else if let Some(last) = out.last_mut() {
            last.message.push('\n');
            last.message.push_str(line);
        } else if !line.trim().is_empty() {
            out.push(Diagnostic {
                severity: Severity::Info,
                line: None,
                column: None,
                message: line.to_string(),
            });
        }
    }
    out
}

/// Verdict for one run.
///
/// Clean exit without error messages is `proved`, unless the checker warned
/// about `sorry`. Any error message is `failed`. A non-zero exit without
/// errors, a signal, or a failed spawn is a crash.
pub fn classify(raw: &RawCheck) -> (Verdict, Vec<Diagnostic>) {
    let diagnostics = parse_diagnostics(&raw.output);
    let has_error = diagnostics.iter().any(|d| d.severity == Severity::Error);
    let uses_sorry = diagnostics
        .iter()
        .any(|d| d.message.contains(SORRY_WARNING));
    let verdict = match &raw.termination {
        Termination::TimedOut => Verdict::Timeout,
        Termination::Signaled(_) | Termination::SpawnFailed(_) => Verdict::VerifierCrash,
        Termination::Exited(_) if has_error || uses_sorry => Verdict::Failed,
        Termination::Exited(0) => Verdict::Proved,
        Termination::Exited(_) => Verdict::VerifierCrash,
    };
    (verdict, diagnostics)
}
