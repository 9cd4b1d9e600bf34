//! Natural-language problem to formal statement.

use std::sync::Arc;

use thiserror::Error;

use crate::clock::Clock;
use crate::gateway::prompts::{render_formalization_prompt, CODE_FENCE};
use crate::gateway::{CompletionRequest, Gateway, GatewayError, SamplingParams};
use crate::record::{AuditEvent, StatementRecord};
use crate::statement::{parse_declaration, InformalProblem};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ExtractError {
    #[error("completion contains no declaration")]
    EmptyExtraction,
}

/// The declaration text in a formalization completion.
///
/// The prompt leaves a `lean4` fence open, so the declaration normally ends at
/// the first closing fence. A completion that re-opens the fence has that
/// opening line skipped first.
pub fn extract(completion: &str) -> Result<String, ExtractError> {
    let mut text = completion.trim_start();
    if let Some(rest) = text.strip_prefix(CODE_FENCE) {
        text = rest;
    }
    let body = text.split(CODE_FENCE).next().unwrap_or("");
    let mut body = body.trim();
    for tag in ["lean4", "lean"] {
        if let Some(rest) = body.strip_prefix(tag) {
            if rest.is_empty() || rest.starts_with('\n') || rest.starts_with("\r\n") {
                body = rest.trim();
                break;
            }
        }
    }
    if body.is_empty() {
        return Err(ExtractError::EmptyExtraction);
    }
    Ok(body.to_string())
}

/// Turns one completion into a record: formalized if it parses, rejected_parse
/// otherwise. The raw completion is always kept in the audit trail.
pub fn record_from_completion(
    iteration: u32,
    problem_id: &str,
    sample_index: u32,
    completion: &str,
    at: u64,
) -> StatementRecord {
    let parsed = extract(completion)
        .map_err(|e| e.to_string())
        .and_then(|text| parse_declaration(&text).map_err(|e| e.to_string()));
    match parsed {
        Ok(decl) => {
            let mut rec = StatementRecord::formalized(
                iteration,
                problem_id,
                sample_index,
                decl.statement,
                at,
            );
            rec.audit.insert(
                0,
                crate::record::AuditEntry {
                    at,
                    event: AuditEvent::RawCompletion {
                        text: completion.to_string(),
                    },
                },
            );
            rec
        }
        Err(error) => StatementRecord::rejected_parse(
            iteration,
            problem_id,
            sample_index,
            completion,
            error,
            at,
        ),
    }
}

pub struct Formalizer {
    gateway: Arc<Gateway>,
    route: String,
    clock: Arc<dyn Clock>,
}

impl Formalizer {
    pub fn new(gateway: Arc<Gateway>, route: impl Into<String>, clock: Arc<dyn Clock>) -> Self {
        Formalizer {
            gateway,
            route: route.into(),
            clock,
        }
    }

    /// One record per requested sample, in sample order.
    pub async fn formalize(
        &self,
        problem: &InformalProblem,
        params: &SamplingParams,
        iteration: u32,
    ) -> Result<Vec<StatementRecord>, GatewayError> {
        let prompt = render_formalization_prompt(problem);
        let req = CompletionRequest::new(prompt, params.clone(), self.route.clone()).with_seed(0);
        let resp = self.gateway.complete(&req).await?;
        Ok(resp
            .completions
            .iter()
            .enumerate()
            .map(|(i, c)| {
                record_from_completion(iteration, &problem.id, i as u32, c, self.clock.now())
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::FixedClock;
    use crate::gateway::{MockBackend, RetryPolicy};
    use crate::record::StatementState;

    #[test]
    fn extraction_cases() {
        assert_eq!(extract("example : True\n```").unwrap(), "example : True");
        assert_eq!(
            extract("```lean4\nexample : True\n```").unwrap(),
            "example : True"
        );
        assert_eq!(
            extract("\nexample : 1 + 1 = 2\n```\nSome prose.").unwrap(),
            "example : 1 + 1 = 2"
        );
        assert_eq!(extract("lean4\nexample : True").unwrap(), "example : True");
        assert_eq!(extract("  example : True  \n").unwrap(), "example : True");
        assert_eq!(extract("   "), Err(ExtractError::EmptyExtraction));
        assert_eq!(extract(""), Err(ExtractError::EmptyExtraction));
        assert_eq!(extract("```\n```"), Err(ExtractError::EmptyExtraction));
        // A tag-like prefix with more text on the line is part of the declaration.
        assert_eq!(extract("leanest").unwrap(), "leanest");
    }

    #[test]
    fn records_from_completions() {
        let ok = record_from_completion(0, "p", 0, "example : 1 + 1 = 2\n```", 7);
        assert_eq!(ok.state, StatementState::Formalized);
        assert_eq!(ok.statement.as_ref().unwrap().goal, "1 + 1 = 2");

        let with_proof =
            record_from_completion(0, "p", 1, "theorem t : 1 + 1 = 2 := by norm_num\n```", 7);
        assert_eq!(with_proof.statement.unwrap().raw, "theorem t : 1 + 1 = 2");

        let bad = record_from_completion(0, "p", 2, "", 7);
        assert_eq!(bad.state, StatementState::RejectedParse);
        assert!(bad.rejection.is_some());
        assert!(bad
            .audit
            .iter()
            .any(|e| matches!(&e.event, AuditEvent::RawCompletion { text } if text.is_empty())));

        let prose = record_from_completion(0, "p", 3, "Sorry, I cannot do that.", 7);
        assert_eq!(prose.state, StatementState::RejectedParse);
    }

    #[tokio::test]
    async fn formalize_conserves_samples() {
        let problem = InformalProblem::new("p1", "Show that 1 + 1 = 2.");
        let mut backend = MockBackend::new();
        backend.script(
            &render_formalization_prompt(&problem),
            vec![
                "example : 1 + 1 = 2\n```".into(),
                "nonsense".into(),
                "\ntheorem x (a : ℕ) : a = a\n```".into(),
            ],
        );
        let gw = Arc::new(Gateway::new(Arc::new(backend), RetryPolicy::no_delay(0), 4));
        let f = Formalizer::new(gw, "formalizer", Arc::new(FixedClock(1)));
        let recs = f
            .formalize(&problem, &SamplingParams::sampled(1.0, 256, 5), 2)
            .await
            .unwrap();
        assert_eq!(recs.len(), 5);
        let states: Vec<_> = recs.iter().map(|r| r.state).collect();
        use StatementState::*;
        assert_eq!(
            states,
            [
                Formalized,
                RejectedParse,
                Formalized,
                Formalized,
                RejectedParse
            ]
        );
        assert_eq!(recs[4].id, "it2/p1#4");
    }
}
