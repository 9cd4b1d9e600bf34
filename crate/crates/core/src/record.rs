//! Per-statement pipeline state, proof attempts and verdicts.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::statement::FormalStatement;

/// Five-way quality classes used by the scoring prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityCategory {
    Excellent,
    Good,
    AboveAverage,
    Fair,
    Poor,
}

impl QualityCategory {
    pub const ALL: [QualityCategory; 5] = [
        QualityCategory::Excellent,
        QualityCategory::Good,
        QualityCategory::AboveAverage,
        QualityCategory::Fair,
        QualityCategory::Poor,
    ];

    /// Spelling used in model responses (`above average`).
    pub fn label(self) -> &'static str {
        match self {
            QualityCategory::Excellent => "excellent",
            QualityCategory::Good => "good",
            QualityCategory::AboveAverage => "above average",
            QualityCategory::Fair => "fair",
            QualityCategory::Poor => "poor",
        }
    }

    /// `fair` and `poor` do not pass the score gate.
    pub fn passes_gate(self) -> bool {
        !matches!(self, QualityCategory::Fair | QualityCategory::Poor)
    }
}

impl fmt::Display for QualityCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityAssessment {
    pub category: QualityCategory,
    pub analysis: String,
    pub translation: String,
    pub raw_response: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Original,
    Negation,
    FalseTest,
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Polarity::Original => "original",
            Polarity::Negation => "negation",
            Polarity::FalseTest => "false_test",
        })
    }
}

/// One sampled proof candidate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofAttempt {
    pub statement_id: String,
    pub polarity: Polarity,
    pub sample_index: u32,
    pub proof_body: String,
    pub full_source: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Proved,
    Failed,
    Timeout,
    VerifierCrash,
}

impl Verdict {
    pub fn is_proved(self) -> bool {
        self == Verdict::Proved
    }

    /// Only deterministic verdicts are worth remembering.
    pub fn is_cacheable(self) -> bool {
        matches!(self, Verdict::Proved | Verdict::Failed)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Proved => "proved",
            Verdict::Failed => "failed",
            Verdict::Timeout => "timeout",
            Verdict::VerifierCrash => "verifier_crash",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
    Info,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<u32>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationOutcome {
    pub verdict: Verdict,
    #[serde(default)]
    pub diagnostics: Vec<Diagnostic>,
    /// Seconds.
    pub wall_time: f64,
    #[serde(default)]
    pub from_cache: bool,
}

impl VerificationOutcome {
    pub fn has_errors(&self) -> bool {
        self.diagnostics
            .iter()
            .any(|d| d.severity == Severity::Error)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatementState {
    Formalized,
    Scored,
    RejectedScore,
    RejectedFalseHypothesis,
    RejectedParse,
    Queued,
    ProvedOriginal,
    ProvedNegation,
    Exhausted,
    Anomalous,
}

impl StatementState {
    pub const ALL: [StatementState; 10] = [
        StatementState::Formalized,
        StatementState::Scored,
        StatementState::RejectedScore,
        StatementState::RejectedFalseHypothesis,
        StatementState::RejectedParse,
        StatementState::Queued,
        StatementState::ProvedOriginal,
        StatementState::ProvedNegation,
        StatementState::Exhausted,
        StatementState::Anomalous,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StatementState::Formalized => "formalized",
            StatementState::Scored => "scored",
            StatementState::RejectedScore => "rejected_score",
            StatementState::RejectedFalseHypothesis => "rejected_false_hypothesis",
            StatementState::RejectedParse => "rejected_parse",
            StatementState::Queued => "queued",
            StatementState::ProvedOriginal => "proved_original",
            StatementState::ProvedNegation => "proved_negation",
            StatementState::Exhausted => "exhausted",
            StatementState::Anomalous => "anomalous",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            StatementState::RejectedScore
                | StatementState::RejectedFalseHypothesis
                | StatementState::RejectedParse
                | StatementState::ProvedOriginal
                | StatementState::ProvedNegation
                | StatementState::Exhausted
                | StatementState::Anomalous
        )
    }

    pub fn is_proved(self) -> bool {
        matches!(
            self,
            StatementState::ProvedOriginal | StatementState::ProvedNegation
        )
    }

    /// Legal single-step moves of the pipeline state machine.
    pub fn can_transition_to(self, next: StatementState) -> bool {
        use StatementState::*;
        match self {
            Formalized => next == Scored,
            Scored => matches!(next, RejectedScore | RejectedFalseHypothesis | Queued),
            Queued => matches!(
                next,
                ProvedOriginal | ProvedNegation | Exhausted | Anomalous
            ),
            _ => false,
        }
    }
}

impl fmt::Display for StatementState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Machine-readable reason attached to every exclusion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RejectionReason {
    Parse { error: String },
    Score { category: QualityCategory },
    FalseHypothesis { sample_index: u32 },
}

/// Scheduler trace event recorded by the dual search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SearchEvent {
    AttemptStarted {
        seq: u64,
        polarity: Polarity,
        sample_index: u32,
    },
    AttemptFinished {
        seq: u64,
        polarity: Polarity,
        sample_index: u32,
        verdict: Verdict,
    },
    Cancelled {
        seq: u64,
        polarity: Polarity,
        sample_index: u32,
    },
    /// An in-flight result that arrived after cancellation and lost.
    Discarded {
        seq: u64,
        polarity: Polarity,
        sample_index: u32,
        verdict: Verdict,
    },
}

impl SearchEvent {
    pub fn seq(&self) -> u64 {
        match self {
            SearchEvent::AttemptStarted { seq, .. }
            | SearchEvent::AttemptFinished { seq, .. }
            | SearchEvent::Cancelled { seq, .. }
            | SearchEvent::Discarded { seq, .. } => *seq,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AuditEvent {
    Transition {
        to: StatementState,
    },
    RawCompletion {
        text: String,
    },
    Note {
        text: String,
    },
    Witness {
        attempt: ProofAttempt,
        outcome: VerificationOutcome,
    },
    Search {
        #[serde(flatten)]
        event: SearchEvent,
    },
    SearchAborted {
        error: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub at: u64,
    #[serde(flatten)]
    pub event: AuditEvent,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptCounts {
    pub original: u32,
    pub negation: u32,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StateError {
    #[error("record {id}: illegal transition {from} -> {to}")]
    IllegalTransition {
        id: String,
        from: StatementState,
        to: StatementState,
    },
    #[error("record {id}: {state} requires a winning attempt of matching polarity")]
    MissingWinner { id: String, state: StatementState },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatementRecord {
    pub id: String,
    pub iteration: u32,
    /// Id of the originating [`InformalProblem`](crate::statement::InformalProblem).
    pub origin: String,
    pub sample_index: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub statement: Option<FormalStatement>,
    pub state: StatementState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assessment: Option<QualityAssessment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub winning_attempt: Option<ProofAttempt>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejection: Option<RejectionReason>,
    #[serde(default)]
    pub attempt_counts: AttemptCounts,
    #[serde(default)]
    pub audit: Vec<AuditEntry>,
}

/// Record id for sample `sample` of `problem` in `iteration`.
pub fn record_id(iteration: u32, problem: &str, sample: u32) -> String {
    format!("it{iteration}/{problem}#{sample}")
}

impl StatementRecord {
    pub fn formalized(
        iteration: u32,
        origin: &str,
        sample_index: u32,
        statement: FormalStatement,
        at: u64,
    ) -> Self {
        let mut rec = Self::empty(iteration, origin, sample_index, StatementState::Formalized);
        rec.statement = Some(statement);
        rec.push(
            at,
            AuditEvent::Transition {
                to: StatementState::Formalized,
            },
        );
        rec
    }

    pub fn rejected_parse(
        iteration: u32,
        origin: &str,
        sample_index: u32,
        completion: &str,
        error: String,
        at: u64,
    ) -> Self {
        let mut rec = Self::empty(
            iteration,
            origin,
            sample_index,
            StatementState::RejectedParse,
        );
        rec.rejection = Some(RejectionReason::Parse { error });
        rec.push(
            at,
            AuditEvent::RawCompletion {
                text: completion.to_string(),
            },
        );
        rec.push(
            at,
            AuditEvent::Transition {
                to: StatementState::RejectedParse,
            },
        );
        rec
    }

    fn empty(iteration: u32, origin: &str, sample_index: u32, state: StatementState) -> Self {
        StatementRecord {
            id: record_id(iteration, origin, sample_index),
            iteration,
            origin: origin.to_string(),
            sample_index,
            statement: None,
            state,
            assessment: None,
            winning_attempt: None,
            rejection: None,
            attempt_counts: AttemptCounts::default(),
            audit: Vec::new(),
        }
    }

    pub fn push(&mut self, at: u64, event: AuditEvent) {
        self.audit.push(AuditEntry { at, event });
    }

    pub fn note(&mut self, at: u64, text: impl Into<String>) {
        self.push(at, AuditEvent::Note { text: text.into() });
    }

    /// Moves to `next`, enforcing pipeline order and the winner invariant.
    pub fn transition(&mut self, next: StatementState, at: u64) -> Result<(), StateError> {
        if !self.state.can_transition_to(next) {
            return Err(StateError::IllegalTransition {
                id: self.id.clone(),
                from: self.state,
                to: next,
            });
        }
        let expected = match next {
            StatementState::ProvedOriginal => Some(Polarity::Original),
            StatementState::ProvedNegation => Some(Polarity::Negation),
            _ => None,
        };
        let winner = self.winning_attempt.as_ref().map(|a| a.polarity);
        if winner != expected {
            return Err(StateError::MissingWinner {
                id: self.id.clone(),
                state: next,
            });
        }
        self.state = next;
        self.push(at, AuditEvent::Transition { to: next });
        Ok(())
    }

    /// Sequence of states reached, in audit order.
    pub fn state_trail(&self) -> Vec<StatementState> {
        self.audit
            .iter()
            .filter_map(|e| match e.event {
                AuditEvent::Transition { to } => Some(to),
                _ => None,
            })
            .collect()
    }

    pub fn witness(&self) -> Option<(&ProofAttempt, &VerificationOutcome)> {
        self.audit.iter().rev().find_map(|e| match &e.event {
            AuditEvent::Witness { attempt, outcome } => Some((attempt, outcome)),
            _ => None,
        })
    }

    pub fn search_events(&self) -> impl Iterator<Item = &SearchEvent> {
        self.audit.iter().filter_map(|e| match &e.event {
            AuditEvent::Search { event } => Some(event),
            _ => None,
        })
    }
}

/// Checks that a trail belongs to
/// `rejected_parse | formalized scored (rejected_score | rejected_false_hypothesis | queued (proved_* | exhausted | anomalous)?)?`.
pub fn is_valid_trail(trail: &[StatementState]) -> bool {
    use StatementState::*;
    match trail {
        [RejectedParse] => true,
        [Formalized, rest @ ..] => {
            rest.windows(2).all(|w| w[0].can_transition_to(w[1]))
                && rest.first().is_none_or(|&s| s == Scored)
        }
        _ => false,
    }
}

/// A validated statement and its proof, as it enters the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremProofPair {
    pub statement: FormalStatement,
    pub proof_body: String,
    pub polarity: Polarity,
    pub iteration: u32,
    pub content_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<QualityCategory>,
    #[serde(default)]
    pub source_record: String,
}

impl TheoremProofPair {
    pub fn new(
        statement: FormalStatement,
        proof_body: String,
        polarity: Polarity,
        iteration: u32,
    ) -> Self {
        let content_hash = statement.content_hash();
        TheoremProofPair {
            statement,
            proof_body,
            polarity,
            iteration,
            content_hash,
            category: None,
            source_record: String::new(),
        }
    }
}
