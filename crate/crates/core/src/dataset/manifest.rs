//! Per-iteration accounting and the stopping rule.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::record::{StatementRecord, StatementState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationManifest {
    pub iteration: u32,
    /// SHA-256 of `config_text`.
    pub config_digest: String,
    pub config_text: String,
    /// Model route used for this iteration.
    pub route: String,
    pub stage_counts: BTreeMap<String, u64>,
    pub new_pairs: u64,
    pub cumulative_pairs: u64,
    /// Benchmark name to pass rate in `[0, 1]`.
    #[serde(default)]
    pub benchmark_scores: BTreeMap<String, f64>,
    pub stop_rule: StopRule,
    pub started_at: u64,
    pub finished_at: u64,
}

impl IterationManifest {
    pub fn count(&self, stage: &str) -> u64 {
        self.stage_counts.get(stage).copied().unwrap_or(0)
    }

    /// `formalized >= scored >= queued + rejected_score + rejected_false_hypothesis`
    /// and every formalized record is accounted for exactly once.
    pub fn funnel_holds(&self) -> bool {
        let c = |s: &str| self.count(s);
        let settled = c("rejected_score")
            + c("rejected_false_hypothesis")
            + c("proved_original")
            + c("proved_negation")
            + c("exhausted")
            + c("anomalous")
            + c("pending");
        c("formalized") >= c("scored")
            && c("scored") >= c("queued") + c("rejected_score") + c("rejected_false_hypothesis")
            && settled == c("formalized")
    }
}

/// Funnel counts for one iteration's records. `scored` and `queued` count
/// every record that ever reached the stage; terminal states count records
/// currently in them; `pending` is records still in a non-terminal state.
pub fn stage_counts<'a>(
    problems: usize,
    records: impl Iterator<Item = &'a StatementRecord>,
) -> BTreeMap<String, u64> {
    let mut counts: BTreeMap<String, u64> = [
        "problems",
        "samples",
        "rejected_parse",
        "formalized",
        "scored",
        "rejected_score",
        "rejected_false_hypothesis",
        "queued",
        "proved_original",
        "proved_negation",
        "exhausted",
        "anomalous",
        "pending",
    ]
    .into_iter()
    .map(|k| (k.to_string(), 0))
    .collect();
    counts.insert("problems".into(), problems as u64);
    let mut bump = |k: &str| *counts.get_mut(k).expect("known stage") += 1;
    for rec in records {
        bump("samples");
        if rec.state == StatementState::RejectedParse {
            bump("rejected_parse");
            continue;
        }
        bump("formalized");
        let trail = rec.state_trail();
        if trail.contains(&StatementState::Scored) {
            bump("scored");
        }
        if trail.contains(&StatementState::Queued) {
            bump("queued");
        }
        match rec.state {
            StatementState::Formalized | StatementState::Scored | StatementState::Queued => {
                bump("pending")
            }
            s => bump(s.as_str()),
        }
    }
    counts
}

/// Stop when both the benchmark gain and the data growth are marginal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StopRule {
    /// On pass-rate fractions.
    pub eps_score: f64,
    /// On `(cumulative_latest - cumulative_previous) / cumulative_latest`.
    pub eps_data: f64,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule {
            eps_score: 0.005,
            eps_data: 0.01,
        }
    }
}

impl StopRule {
    /// Largest gain over benchmarks scored in both manifests; 0 if none are shared.
    pub fn score_gain(prev: &IterationManifest, latest: &IterationManifest) -> f64 {
        latest
            .benchmark_scores
            .iter()
            .filter_map(|(k, v)| prev.benchmark_scores.get(k).map(|p| v - p))
            .fold(None, |acc: Option<f64>, g| {
                Some(acc.map_or(g, |a| a.max(g)))
            })
            .unwrap_or(0.0)
    }

    pub fn data_growth(prev: &IterationManifest, latest: &IterationManifest) -> f64 {
        if latest.cumulative_pairs == 0 {
            return 0.0;
        }
        latest
            .cumulative_pairs
            .saturating_sub(prev.cumulative_pairs) as f64
            / latest.cumulative_pairs as f64
    }

    pub fn should_stop(&self, manifests: &[IterationManifest]) -> bool {
        let [.., prev, latest] = manifests else {
            return false;
        };
        Self::score_gain(prev, latest) < self.eps_score
            && Self::data_growth(prev, latest) < self.eps_data
    }
}

pub fn should_stop(manifests: &[IterationManifest], rule: &StopRule) -> bool {
    rule.should_stop(manifests)
}
