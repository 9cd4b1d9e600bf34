//! Quality scoring, the score gate, and hypothesis rejection.

use std::sync::Arc;

use thiserror::Error;

use crate::clock::Clock;
use crate::gateway::prompts::render_scoring_prompt;
use crate::gateway::{CompletionRequest, Gateway, GatewayError, SamplingParams};
use crate::record::{
    AuditEvent, Polarity, QualityAssessment, QualityCategory, RejectionReason, StateError,
    StatementRecord, StatementState,
};
use crate::search::{run_attempt, ProofSampler, SearchError};
use crate::verifier::ProofVerifier;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("record {id} is {state}, expected {expected}")]
    WrongState {
        id: String,
        state: StatementState,
        expected: StatementState,
    },
    #[error("record {0} has no statement")]
    NoStatement(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    State(#[from] StateError),
}

fn expect_state(rec: &StatementRecord, expected: StatementState) -> Result<(), FilterError> {
    if rec.state != expected {
        return Err(FilterError::WrongState {
            id: rec.id.clone(),
            state: rec.state,
            expected,
        });
    }
    Ok(())
}

/// Normalizes an assessment value: case, backticks, quotes, emphasis and
/// trailing punctuation are ignored; `above_average` and `above-average`
/// are accepted.
pub fn parse_category(value: &str) -> Option<QualityCategory> {
    let cleaned: String = value
        .chars()
        .map(|c| match c {
            '_' | '-' => ' ',
            c => c.to_ascii_lowercase(),
        })
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    let words: Vec<&str> = cleaned.split_whitespace().collect();
    let label_of = |ws: &[&str]| -> Option<QualityCategory> {
        match ws {
            ["excellent", ..] => Some(QualityCategory::Excellent),
            ["good", ..] => Some(QualityCategory::Good),
            ["above", "average", ..] => Some(QualityCategory::AboveAverage),
            ["fair", ..] => Some(QualityCategory::Fair),
            ["poor", ..] => Some(QualityCategory::Poor),
            _ => None,
        }
    };
    if let Some(c) = label_of(&words) {
        return Some(c);
    }
    // Prose such as "The statement is good": accept only an unambiguous mention.
    let mut found: Vec<QualityCategory> = (0..words.len())
        .filter_map(|i| label_of(&words[i..]))
        .collect();
    found.dedup();
    match found.as_slice() {
        [one] => Some(*one),
        _ => None,
    }
}

fn section<'a>(lines: &[&'a str], marker: &str) -> Option<(usize, &'a str)> {
    lines.iter().enumerate().rev().find_map(|(i, l)| {
        let t = l.trim().trim_start_matches(['*', '#', ' ']);
        let lower = t.to_ascii_lowercase();
        lower.starts_with(&marker.to_ascii_lowercase()).then(|| {
            (
                i,
                t[marker.len()..].trim_start_matches(['*', ' ', ':']).trim(),
            )
        })
    })
}

/// Reads the `Assessment:` line of a scoring completion. `None` when there
/// is no such line or its value names no category.
pub fn parse_assessment(completion: &str) -> Option<QualityAssessment> {
    let lines: Vec<&str> = completion.lines().collect();
    let (at, value) = section(&lines, "Assessment")?;
    let category = parse_category(value)?;
    let block = |marker: &str| -> String {
        match section(&lines[..at], marker) {
            Some((i, first)) => {
                let mut out = vec![first];
                for l in &lines[i + 1..at] {
                    let t = l.trim_start_matches(['*', ' ']).to_ascii_lowercase();
                    if t.starts_with("analysis") || t.starts_with("assessment") {
                        break;
                    }
                    out.push(l);
                }
                out.join("\n").trim().to_string()
            }
            None => String::new(),
        }
    };
    Some(QualityAssessment {
        category,
        analysis: block("Analysis"),
        translation: block("Translate the code to natural language"),
        raw_response: completion.to_string(),
    })
}

/// Attaches an assessment and moves `formalized -> scored`. Unreadable
/// assessments count as `poor`.
pub fn apply_assessment(
    mut rec: StatementRecord,
    completion: &str,
    at: u64,
) -> Result<StatementRecord, FilterError> {
    expect_state(&rec, StatementState::Formalized)?;
    let assessment = match parse_assessment(completion) {
        Some(a) => a,
        None => {
            rec.note(
                at,
                "no readable assessment in scoring response; defaulting to poor",
            );
            QualityAssessment {
                category: QualityCategory::Poor,
                analysis: String::new(),
                translation: String::new(),
                raw_response: completion.to_string(),
            }
        }
    };
    rec.assessment = Some(assessment);
    rec.transition(StatementState::Scored, at)?;
    Ok(rec)
}

/// `scored -> rejected_score` for fair and poor; other categories stay scored.
pub fn apply_score_gate(mut rec: StatementRecord, at: u64) -> Result<StatementRecord, FilterError> {
    expect_state(&rec, StatementState::Scored)?;
    let category = rec
        .assessment
        .as_ref()
        .map_or(QualityCategory::Poor, |a| a.category);
    if !category.passes_gate() {
        rec.rejection = Some(RejectionReason::Score { category });
        rec.transition(StatementState::RejectedScore, at)?;
    }
    Ok(rec)
}

pub struct Scorer {
    gateway: Arc<Gateway>,
    route: String,
    clock: Arc<dyn Clock>,
}

impl Scorer {
    pub fn new(gateway: Arc<Gateway>, route: impl Into<String>, clock: Arc<dyn Clock>) -> Self {
        Scorer {
            gateway,
            route: route.into(),
            clock,
        }
    }

    /// One completion per statement, whatever `params.n_samples` says.
    pub async fn score(
        &self,
        rec: StatementRecord,
        params: &SamplingParams,
    ) -> Result<StatementRecord, FilterError> {
        expect_state(&rec, StatementState::Formalized)?;
        let stmt = rec
            .statement
            .as_ref()
            .ok_or_else(|| FilterError::NoStatement(rec.id.clone()))?;
        let req = CompletionRequest::new(
            render_scoring_prompt(stmt),
            params.with_samples(1),
            self.route.clone(),
        )
        .with_seed(0);
        let resp = self.gateway.complete(&req).await?;
        let completion = resp.completions.into_iter().next().unwrap_or_default();
        apply_assessment(rec, &completion, self.clock.now())
    }
}

/// Tries to prove the statement with its goal replaced by `False`. A verified
/// proof means the hypotheses are inconsistent: the record is rejected and
/// the proof kept as witness. Otherwise the record is queued.
pub async fn hypothesis_rejection(
    mut rec: StatementRecord,
    budget: u32,
    sampler: &dyn ProofSampler,
    verifier: &dyn ProofVerifier,
    attempt_timeout: std::time::Duration,
    clock: &dyn Clock,
) -> Result<StatementRecord, FilterError> {
    expect_state(&rec, StatementState::Scored)?;
    let false_stmt = rec
        .statement
        .as_ref()
        .ok_or_else(|| FilterError::NoStatement(rec.id.clone()))?
        .rewrite_goal_to_false();
    for i in 0..budget {
        let res = run_attempt(
            sampler,
            verifier,
            &rec.id,
            &false_stmt,
            Polarity::FalseTest,
            i,
            attempt_timeout,
        )
        .await?;
        if let (true, Some(attempt), Some(outcome)) =
            (res.verdict.is_proved(), res.attempt, res.outcome)
        {
            let at = clock.now();
            rec.push(at, AuditEvent::Witness { attempt, outcome });
            rec.rejection = Some(RejectionReason::FalseHypothesis { sample_index: i });
            rec.transition(StatementState::RejectedFalseHypothesis, at)?;
            return Ok(rec);
        }
    }
    rec.transition(StatementState::Queued, clock.now())?;
    Ok(rec)
}
