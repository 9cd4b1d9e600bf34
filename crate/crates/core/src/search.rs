//! Concurrent proof search over a statement and its negation.
//!
//! Two streams sample and verify candidates one attempt at a time. The first
//! verified proof cancels both streams. Scheduling keeps the streams in step:
//! attempt `n` of one stream may start only while `n` is at most `p` past the
//! number of attempts the other stream has already finished in order, where
//! `p` is the per-stream parallelism. When one stream succeeds at attempt `j`
//! the other has therefore started at most `j - 1 + p` attempts.
//!
//! Attempt `i` (zero-based) belongs to round `i / p`. The winner is the
//! success in the earliest round; successes of both polarities in that round
//! make the result anomalous.

use std::collections::HashMap;
use std::sync::Arc;

use async_trait::async_trait;
use futures::future::{AbortHandle, Abortable};
use futures::stream::{FuturesUnordered, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::time::Instant;

use crate::clock::Clock;
use crate::gateway::prompts::{extract_proof_body, render_proof_prompt, ProofPromptStyle};
use crate::gateway::{CompletionRequest, Gateway, GatewayError, SamplingParams};
use crate::record::{
    AttemptCounts, AuditEvent, Polarity, ProofAttempt, SearchEvent, StateError, StatementRecord,
    StatementState, TheoremProofPair, Verdict, VerificationOutcome,
};
use crate::statement::FormalStatement;
use crate::verifier::{assemble_source, ProofVerifier, VerificationJob, VerifierError};

/// Produces one proof body per call for a statement.
#[async_trait]
pub trait ProofSampler: Send + Sync {
    async fn sample(
        &self,
        stmt: &FormalStatement,
        polarity: Polarity,
        sample_index: u32,
    ) -> Result<String, GatewayError>;
}

/// Sampler backed by the model gateway: one completion per attempt, seeded
/// with the attempt index.
pub struct GatewayProver {
    gateway: Arc<Gateway>,
    route: String,
    params: SamplingParams,
    style: ProofPromptStyle,
}

impl GatewayProver {
    pub fn new(gateway: Arc<Gateway>, route: impl Into<String>, params: SamplingParams) -> Self {
        GatewayProver {
            gateway,
            route: route.into(),
            params: params.with_samples(1),
            style: ProofPromptStyle::default(),
        }
    }

    pub fn with_style(mut self, style: ProofPromptStyle) -> Self {
        self.style = style;
        self
    }
}

#[async_trait]
impl ProofSampler for GatewayProver {
    async fn sample(
        &self,
        stmt: &FormalStatement,
        _polarity: Polarity,
        sample_index: u32,
    ) -> Result<String, GatewayError> {
        let prompt = render_proof_prompt(stmt, self.style);
        let req = CompletionRequest::new(prompt, self.params.clone(), self.route.clone())
            .with_seed(u64::from(sample_index));
        let resp = self.gateway.complete(&req).await?;
        let text = resp.completions.into_iter().next().unwrap_or_default();
        Ok(extract_proof_body(&text))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DualSearchConfig {
    /// Attempts per stream.
    pub k: u32,
    pub per_attempt_timeout_s: f64,
    /// Concurrent attempts per stream.
    pub stream_parallelism: u32,
}

impl Default for DualSearchConfig {
    fn default() -> Self {
        DualSearchConfig {
            k: 64,
            per_attempt_timeout_s: 600.0,
            stream_parallelism: 1,
        }
    }
}

impl DualSearchConfig {
    pub fn new(k: u32, stream_parallelism: u32) -> Self {
        DualSearchConfig {
            k,
            stream_parallelism,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        if self.k == 0 {
            return Err(SearchError::InvalidConfig("k must be at least 1".into()));
        }
        if self.stream_parallelism == 0 {
            return Err(SearchError::InvalidConfig(
                "stream_parallelism must be at least 1".into(),
            ));
        }
        if !(self.per_attempt_timeout_s.is_finite() && self.per_attempt_timeout_s > 0.0) {
            return Err(SearchError::InvalidConfig(
                "per_attempt_timeout_s must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchError {
    #[error("invalid search config: {0}")]
    InvalidConfig(String),
    #[error("record {0} has no statement")]
    NoStatement(String),
    #[error("record {id} is {state}, expected queued")]
    NotQueued { id: String, state: StatementState },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Verifier(#[from] VerifierError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchResult {
    ProvedOriginal,
    ProvedNegation,
    Exhausted,
    Anomalous,
}

impl SearchResult {
    pub fn state(self) -> StatementState {
        match self {
            SearchResult::ProvedOriginal => StatementState::ProvedOriginal,
            SearchResult::ProvedNegation => StatementState::ProvedNegation,
            SearchResult::Exhausted => StatementState::Exhausted,
            SearchResult::Anomalous => StatementState::Anomalous,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualSearchOutcome {
    pub result: SearchResult,
    pub winning_attempt: Option<ProofAttempt>,
    pub winning_outcome: Option<VerificationOutcome>,
    /// Both verified proofs when the result is anomalous.
    pub conflicting: Vec<(ProofAttempt, VerificationOutcome)>,
    /// Attempts started per stream.
    pub attempts_used: AttemptCounts,
    pub events: Vec<SearchEvent>,
    /// Seconds.
    pub wall_time: f64,
}

/// Result of one sample-and-verify attempt.
#[derive(Debug, Clone, PartialEq)]
pub struct AttemptResult {
    pub polarity: Polarity,
    pub sample_index: u32,
    pub verdict: Verdict,
    /// Absent if the attempt timed out before a candidate was produced.
    pub attempt: Option<ProofAttempt>,
    pub outcome: Option<VerificationOutcome>,
}

/// Samples one candidate and verifies it, bounded by `timeout`.
pub async fn run_attempt(
    sampler: &dyn ProofSampler,
    verifier: &dyn ProofVerifier,
    record_id: &str,
    stmt: &FormalStatement,
    polarity: Polarity,
    sample_index: u32,
    timeout: std::time::Duration,
) -> Result<AttemptResult, SearchError> {
    let work = async {
        let body = sampler.sample(stmt, polarity, sample_index).await?;
        let candidate = stmt.with_tactic_proof(&body);
        let full_source = assemble_source(&candidate);
        let outcome = verifier
            .verify(VerificationJob::new(full_source.clone()))
            .await?;
        let attempt = ProofAttempt {
            statement_id: record_id.to_string(),
            polarity,
            sample_index,
            proof_body: body,
            full_source,
        };
        Ok::<_, SearchError>((attempt, outcome))
    };
    match tokio::time::timeout(timeout, work).await {
        Ok(Ok((attempt, outcome))) => Ok(AttemptResult {
            polarity,
            sample_index,
            verdict: outcome.verdict,
            attempt: Some(attempt),
            outcome: Some(outcome),
        }),
        Ok(Err(e)) => Err(e),
        Err(_) => Ok(AttemptResult {
            polarity,
            sample_index,
            verdict: Verdict::Timeout,
            attempt: None,
            outcome: None,
        }),
    }
}

#[derive(Debug, Default)]
struct Stream {
    started: u32,
    in_flight: u32,
    finished: Vec<bool>,
    /// Attempts finished contiguously from the first.
    prefix: u32,
}

impl Stream {
    fn finish(&mut self, index: u32) {
        let i = index as usize;
        if self.finished.len() <= i {
            self.finished.resize(i + 1, false);
        }
        self.finished[i] = true;
        while self
            .finished
            .get(self.prefix as usize)
            .copied()
            .unwrap_or(false)
        {
            self.prefix += 1;
        }
        self.in_flight -= 1;
    }
}

fn slot(p: Polarity) -> usize {
    match p {
        Polarity::Negation => 1,
        _ => 0,
    }
}

/// Races proofs of `stmt` and its negation. `record_id` labels the attempts.
pub async fn dual_search(
    record_id: &str,
    stmt: &FormalStatement,
    cfg: &DualSearchConfig,
    sampler: &dyn ProofSampler,
    verifier: &dyn ProofVerifier,
    clock: &dyn Clock,
) -> Result<DualSearchOutcome, SearchError> {
    cfg.validate()?;
    let started_at = Instant::now();
    let timeout = std::time::Duration::from_secs_f64(cfg.per_attempt_timeout_s);
    let p = cfg.stream_parallelism;
    let round = |i: u32| i / p;
    let statements = [stmt.clone(), stmt.negate()];
    let polarities = [Polarity::Original, Polarity::Negation];

    let mut streams = [Stream::default(), Stream::default()];
    let mut events = Vec::new();
    let mut running = FuturesUnordered::new();
    let mut handles: HashMap<(usize, u32), AbortHandle> = HashMap::new();
    let mut cancelled = false;
    // Earliest round with a verified proof, and the proofs found in it.
    let mut best_round: Option<u32> = None;
    let mut successes: Vec<(u32, ProofAttempt, VerificationOutcome)> = Vec::new();
    // Strictly increasing even when the clock is frozen or coarse.
    let mut last_seq: Option<u64> = None;
    let mut stamp = || {
        let seq = last_seq.map_or(clock.now(), |l| clock.now().max(l + 1));
        last_seq = Some(seq);
        seq
    };

    loop {
        if !cancelled {
            // Start attempts alternately so neither stream gets ahead by scan order.
            let mut progressed = true;
            while progressed {
                progressed = false;
                for s in 0..2 {
                    let (me, other) = (&streams[s], &streams[1 - s]);
                    let next = me.started + 1;
                    if me.started < cfg.k && me.in_flight < p && next <= other.prefix + p {
                        let index = me.started;
                        let stream = &mut streams[s];
                        stream.started += 1;
                        stream.in_flight += 1;
                        events.push(SearchEvent::AttemptStarted {
                            seq: stamp(),
                            polarity: polarities[s],
                            sample_index: index,
                        });
                        let (handle, reg) = AbortHandle::new_pair();
                        handles.insert((s, index), handle);
                        let stmt_s = &statements[s];
                        let pol = polarities[s];
                        running.push(async move {
                            let fut = run_attempt(
                                sampler, verifier, record_id, stmt_s, pol, index, timeout,
                            );
                            (s, index, Abortable::new(fut, reg).await)
                        });
                        progressed = true;
                    }
                }
            }
        }

        let Some((s, index, res)) = running.next().await else {
            break;
        };
        handles.remove(&(s, index));
        streams[s].finish(index);
        let res = match res {
            Ok(r) => r?,
            Err(_aborted) => continue,
        };
        let polarity = polarities[s];
        let r = round(index);
        let proved = res.verdict.is_proved() && best_round.is_none_or(|b| r <= b);
        if proved {
            if best_round.is_none_or(|b| r < b) {
                best_round = Some(r);
                successes.retain(|(sr, _, _)| *sr <= r);
            }
            events.push(SearchEvent::AttemptFinished {
                seq: stamp(),
                polarity,
                sample_index: index,
                verdict: res.verdict,
            });
            successes.push((
                r,
                res.attempt.expect("verified attempt"),
                res.outcome.expect("verified outcome"),
            ));
            cancelled = true;
            // In-flight work from later rounds cannot change the outcome.
            let doomed: Vec<(usize, u32)> = handles
                .keys()
                .copied()
                .filter(|&(_, i)| round(i) > r)
                .collect();
            for key in doomed {
                if let Some(h) = handles.remove(&key) {
                    h.abort();
                    events.push(SearchEvent::Cancelled {
                        seq: stamp(),
                        polarity: polarities[key.0],
                        sample_index: key.1,
                    });
                }
            }
        } else if cancelled {
            events.push(SearchEvent::Discarded {
                seq: stamp(),
                polarity,
                sample_index: index,
                verdict: res.verdict,
            });
        } else {
            events.push(SearchEvent::AttemptFinished {
                seq: stamp(),
                polarity,
                sample_index: index,
                verdict: res.verdict,
            });
        }
    }

    let attempts_used = AttemptCounts {
        original: streams[0].started,
        negation: streams[1].started,
    };
    let wall_time = started_at.elapsed().as_secs_f64();
    let mut outcome = DualSearchOutcome {
        result: SearchResult::Exhausted,
        winning_attempt: None,
        winning_outcome: None,
        conflicting: Vec::new(),
        attempts_used,
        events,
        wall_time,
    };
    if successes.is_empty() {
        return Ok(outcome);
    }
    successes.sort_by_key(|(_, a, _)| (slot(a.polarity), a.sample_index));
    let has_original = successes
        .iter()
        .any(|(_, a, _)| a.polarity == Polarity::Original);
    let has_negation = successes
        .iter()
        .any(|(_, a, _)| a.polarity == Polarity::Negation);
    if has_original && has_negation {
        outcome.result = SearchResult::Anomalous;
        let first_neg = successes
            .iter()
            .position(|(_, a, _)| a.polarity == Polarity::Negation)
            .expect("negation success");
        let neg = successes.swap_remove(first_neg);
        let orig = successes.swap_remove(0);
        outcome.conflicting = vec![(orig.1, orig.2), (neg.1, neg.2)];
    } else {
        let (_, attempt, verification) = successes.swap_remove(0);
        outcome.result = if has_original {
            SearchResult::ProvedOriginal
        } else {
            SearchResult::ProvedNegation
        };
        outcome.winning_attempt = Some(attempt);
        outcome.winning_outcome = Some(verification);
    }
    Ok(outcome)
}

/// Runs the dual search for a queued record.
pub async fn search_record(
    rec: &StatementRecord,
    cfg: &DualSearchConfig,
    sampler: &dyn ProofSampler,
    verifier: &dyn ProofVerifier,
    clock: &dyn Clock,
) -> Result<DualSearchOutcome, SearchError> {
    if rec.state != StatementState::Queued {
        return Err(SearchError::NotQueued {
            id: rec.id.clone(),
            state: rec.state,
        });
    }
    let stmt = rec
        .statement
        .as_ref()
        .ok_or_else(|| SearchError::NoStatement(rec.id.clone()))?;
    dual_search(&rec.id, stmt, cfg, sampler, verifier, clock).await
}

/// Applies a search outcome to its record. Proved outcomes yield the pair to
/// store: the statement itself for the original stream, the negated
/// statement for the negation stream.
pub fn finalize(
    mut rec: StatementRecord,
    outcome: &DualSearchOutcome,
    at: u64,
) -> Result<(StatementRecord, Option<TheoremProofPair>), StateError> {
    for event in &outcome.events {
        rec.push(
            at,
            AuditEvent::Search {
                event: event.clone(),
            },
        );
    }
    rec.attempt_counts = outcome.attempts_used;
    let mut pair = None;
    match outcome.result {
        SearchResult::ProvedOriginal | SearchResult::ProvedNegation => {
            let attempt =
                outcome
                    .winning_attempt
                    .clone()
                    .ok_or_else(|| StateError::MissingWinner {
                        id: rec.id.clone(),
                        state: outcome.result.state(),
                    })?;
            if let Some(verification) = &outcome.winning_outcome {
                rec.push(
                    at,
                    AuditEvent::Witness {
                        attempt: attempt.clone(),
                        outcome: verification.clone(),
                    },
                );
            }
            if let Some(stmt) = &rec.statement {
                let proved_stmt = match attempt.polarity {
                    Polarity::Negation => stmt.negate(),
                    _ => stmt.clone(),
                };
                let mut p = TheoremProofPair::new(
                    proved_stmt,
                    attempt.proof_body.clone(),
                    attempt.polarity,
                    rec.iteration,
                );
                p.category = rec.assessment.as_ref().map(|a| a.category);
                p.source_record = rec.id.clone();
                pair = Some(p);
            }
            rec.winning_attempt = Some(attempt);
        }
        SearchResult::Anomalous => {
            for (attempt, verification) in &outcome.conflicting {
                rec.push(
                    at,
                    AuditEvent::Witness {
                        attempt: attempt.clone(),
                        outcome: verification.clone(),
                    },
                );
            }
            rec.note(
                at,
                "anomalous: both the statement and its negation were verified",
            );
        }
        SearchResult::Exhausted => {}
    }
    rec.transition(outcome.result.state(), at)?;
    Ok((rec, pair))
}
