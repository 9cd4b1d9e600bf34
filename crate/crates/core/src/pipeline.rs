//! One expert-iteration round: formalize, score and gate, reject
//! inconsistent hypotheses, dual search, store pairs.
//!
//! Every stage reads its inputs from the store and writes each finished
//! record back before moving on, so an interrupted run resumes by running
//! again: records already past a stage are skipped.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autoformalize::Formalizer;
use crate::clock::Clock;
use crate::dataset::{stage_counts, DatasetStore, IterationManifest, StopRule, StorageError};
use crate::filter::{apply_score_gate, hypothesis_rejection, FilterError, Scorer};
use crate::gateway::prompts::ProofPromptStyle;
use crate::gateway::{Gateway, GatewayError, SamplingParams};
use crate::record::{AuditEvent, StateError, StatementRecord, StatementState};
use crate::search::{finalize, search_record, DualSearchConfig, GatewayProver, SearchError};
use crate::statement::{sha256_hex, InformalProblem};
use crate::verifier::ProofVerifier;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Routes {
    /// Route per iteration; the last entry is reused for later iterations.
    pub formalizer: Vec<String>,
    pub scorer: Vec<String>,
    pub prover: Vec<String>,
}

impl Default for Routes {
    fn default() -> Self {
        Routes {
            formalizer: vec!["formalizer".into()],
            scorer: vec!["scorer".into()],
            prover: vec!["prover".into()],
        }
    }
}

fn pick(routes: &[String], iteration: u32) -> String {
    routes
        .get((iteration as usize).min(routes.len().saturating_sub(1)))
        .cloned()
        .unwrap_or_default()
}

impl Routes {
    pub fn formalizer_for(&self, iteration: u32) -> String {
        pick(&self.formalizer, iteration)
    }
    pub fn scorer_for(&self, iteration: u32) -> String {
        pick(&self.scorer, iteration)
    }
    pub fn prover_for(&self, iteration: u32) -> String {
        pick(&self.prover, iteration)
    }
}

/// Fine-tuning settings carried for the (external) training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub global_batch_size: u32,
    pub learning_rate: f64,
    pub warmup_steps: u32,
    pub schedule: String,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            global_batch_size: 512,
            learning_rate: 1e-4,
            warmup_steps: 6000,
            schedule: "constant".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub routes: Routes,
    pub formalization: SamplingParams,
    pub scoring: SamplingParams,
    pub proving: SamplingParams,
    pub proof_prompt: ProofPromptStyle,
    /// Attempts at proving `False` from the hypotheses; 0 disables the check.
    pub false_test_budget: u32,
    pub search: DualSearchConfig,
    pub stop: StopRule,
    /// Records processed concurrently within a stage.
    pub concurrency: usize,
    pub training: TrainingConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            routes: Routes::default(),
            formalization: SamplingParams::greedy(1024).with_stop("```"),
            scoring: SamplingParams::greedy(1024),
            proving: SamplingParams::sampled(1.0, 2048, 1).with_stop("```"),
            proof_prompt: ProofPromptStyle::default(),
            false_test_budget: 16,
            search: DualSearchConfig::default(),
            stop: StopRule::default(),
            concurrency: 8,
            training: TrainingConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.search
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        for (name, p) in [
            ("formalization", &self.formalization),
            ("scoring", &self.scoring),
            ("proving", &self.proving),
        ] {
            p.validate()
                .map_err(|e| PipelineError::Config(format!("{name}: {e}")))?;
        }
        if self.concurrency == 0 {
            return Err(PipelineError::Config(
                "concurrency must be at least 1".into(),
            ));
        }
        for (name, r) in [
            ("formalizer", &self.routes.formalizer),
            ("scorer", &self.routes.scorer),
            ("prover", &self.routes.prover),
        ] {
            if r.is_empty() {
                return Err(PipelineError::Config(format!("routes.{name} is empty")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("{stage} stage: {source}")]
    Backend {
        stage: &'static str,
        #[source]
        source: GatewayError,
    },
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error("search aborted for {0} record(s); they stay queued for a resumed run")]
    SearchIncomplete(usize),
}

/// Shared services for a run.
pub struct PipelineContext {
    pub cfg: PipelineConfig,
    /// Serialized configuration recorded in manifests.
    pub config_text: String,
    pub gateway: Arc<Gateway>,
    pub verifier: Arc<dyn ProofVerifier>,
    pub clock: Arc<dyn Clock>,
}

impl PipelineContext {
    fn prover(&self, iteration: u32) -> GatewayProver {
        GatewayProver::new(
            self.gateway.clone(),
            self.cfg.routes.prover_for(iteration),
            self.cfg.proving.clone(),
        )
        .with_style(self.cfg.proof_prompt)
    }

    fn attempt_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.cfg.search.per_attempt_timeout_s)
    }
}

fn ids_in_state(
    store: &DatasetStore,
    iteration: u32,
    state: StatementState,
) -> Vec<StatementRecord> {
    store
        .records_in(iteration)
        .filter(|r| r.state == state)
        .cloned()
        .collect()
}

/// Runs every stage of `iteration` and returns its manifest, which is also
/// appended to the store unless an identical one is already there.
pub async fn run_iteration(
    ctx: &PipelineContext,
    store: &mut DatasetStore,
    corpus: &[InformalProblem],
    iteration: u32,
    benchmark_scores: BTreeMap<String, f64>,
) -> Result<IterationManifest, PipelineError> {
    ctx.cfg.validate()?;
    let started_at = ctx.clock.now();
    run_stages(ctx, store, corpus, iteration).await?;
    let manifest = build_manifest(
        ctx,
        store,
        corpus.len(),
        iteration,
        benchmark_scores,
        started_at,
    );
    if store.manifest(iteration) != Some(&manifest) {
        store.append_manifest(&manifest)?;
    }
    Ok(manifest)
}

pub fn build_manifest(
    ctx: &PipelineContext,
    store: &DatasetStore,
    problems: usize,
    iteration: u32,
    benchmark_scores: BTreeMap<String, f64>,
    started_at: u64,
) -> IterationManifest {
    let new_pairs = store.pairs().filter(|p| p.iteration == iteration).count() as u64;
    let cumulative_pairs = store.pairs().filter(|p| p.iteration <= iteration).count() as u64;
    IterationManifest {
        iteration,
        config_digest: sha256_hex(ctx.config_text.as_bytes()),
        config_text: ctx.config_text.clone(),
        route: ctx.cfg.routes.prover_for(iteration),
        stage_counts: stage_counts(problems, store.records_in(iteration)),
        new_pairs,
        cumulative_pairs,
        benchmark_scores,
        stop_rule: ctx.cfg.stop,
        started_at,
        finished_at: ctx.clock.now(),
    }
}

pub async fn run_stages(
    ctx: &PipelineContext,
    store: &mut DatasetStore,
    corpus: &[InformalProblem],
    iteration: u32,
) -> Result<(), PipelineError> {
    formalize_stage(ctx, store, corpus, iteration).await?;
    score_stage(ctx, store, iteration).await?;
    rejection_stage(ctx, store, iteration).await?;
    search_stage(ctx, store, iteration).await
}

pub async fn formalize_stage(
    ctx: &PipelineContext,
    store: &mut DatasetStore,
    corpus: &[InformalProblem],
    iteration: u32,
) -> Result<(), PipelineError> {
    // A problem is done once all of its samples are stored.
    let mut per_problem: BTreeMap<&str, u32> = BTreeMap::new();
    for r in store.records_in(iteration) {
        *per_problem.entry(r.origin.as_str()).or_default() += 1;
    }
    let wanted = ctx.cfg.formalization.n_samples;
    let todo: Vec<&InformalProblem> = corpus
        .iter()
        .filter(|p| per_problem.get(p.id.as_str()).copied().unwrap_or(0) < wanted)
        .collect();
    tracing::info!(
        iteration,
        todo = todo.len(),
        skipped = corpus.len() - todo.len(),
        "formalize"
    );
    let formalizer = Formalizer::new(
        ctx.gateway.clone(),
        ctx.cfg.routes.formalizer_for(iteration),
        ctx.clock.clone(),
    );
    let formalizer = &formalizer;
    let mut results = stream::iter(todo)
        .map(|p| async move {
            formalizer
                .formalize(p, &ctx.cfg.formalization, iteration)
                .await
        })
        .buffered(ctx.cfg.concurrency);
    let mut first_err = None;
    while let Some(res) = results.next().await {
        match res {
            Ok(recs) => {
                for rec in &recs {
                    if store.record(&rec.id).is_none() {
                        store.put_record(rec)?;
                    }
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    match first_err {
        Some(source) => Err(PipelineError::Backend {
            stage: "formalize",
            source,
        }),
        None => Ok(()),
    }
}

fn backend_of(stage: &'static str, e: FilterError) -> PipelineError {
    match e {
        FilterError::Gateway(source) => PipelineError::Backend { stage, source },
        FilterError::Search(SearchError::Gateway(source)) => {
            PipelineError::Backend { stage, source }
        }
        other => PipelineError::Filter(other),
    }
}

pub async fn score_stage(
    ctx: &PipelineContext,
    store: &mut DatasetStore,
    iteration: u32,
) -> Result<(), PipelineError> {
    let todo = ids_in_state(store, iteration, StatementState::Formalized);
    tracing::info!(iteration, todo = todo.len(), "score");
    let scorer = Scorer::new(
        ctx.gateway.clone(),
        ctx.cfg.routes.scorer_for(iteration),
        ctx.clock.clone(),
    );
    let scorer = &scorer;
    let mut results = stream::iter(todo)
        .map(|rec| async move {
            let rec = scorer.score(rec, &ctx.cfg.scoring).await?;
            apply_score_gate(rec, ctx.clock.now())
        })
        .buffered(ctx.cfg.concurrency);
    let mut first_err = None;
    while let Some(res) = results.next().await {
        match res {
            Ok(rec) => store.put_record(&rec)?,
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    first_err.map_or(Ok(()), |e| Err(backend_of("score", e)))
}

pub async fn rejection_stage(
    ctx: &PipelineContext,
    store: &mut DatasetStore,
    iteration: u32,
) -> Result<(), PipelineError> {
    let todo = ids_in_state(store, iteration, StatementState::Scored);
    tracing::info!(
        iteration,
        todo = todo.len(),
        budget = ctx.cfg.false_test_budget,
        "hypothesis rejection"
    );
    let prover = ctx.prover(iteration);
    let prover = &prover;
    let timeout = ctx.attempt_timeout();
    let mut results = stream::iter(todo)
        .map(|rec| async move {
            hypothesis_rejection(
                rec,
                ctx.cfg.false_test_budget,
                prover,
                ctx.verifier.as_ref(),
                timeout,
                ctx.clock.as_ref(),
            )
            .await
        })
        .buffered(ctx.cfg.concurrency);
    let mut first_err = None;
    while let Some(res) = results.next().await {
        match res {
            Ok(rec) => store.put_record(&rec)?,
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    first_err.map_or(Ok(()), |e| Err(backend_of("hypothesis rejection", e)))
}

pub async fn search_stage(
    ctx: &PipelineContext,
    store: &mut DatasetStore,
    iteration: u32,
) -> Result<(), PipelineError> {
    let todo = ids_in_state(store, iteration, StatementState::Queued);
    tracing::info!(
        iteration,
        todo = todo.len(),
        k = ctx.cfg.search.k,
        "dual search"
    );
    let prover = ctx.prover(iteration);
    let prover = &prover;
    let mut results = stream::iter(todo)
        .map(|rec| async move {
            let res = search_record(
                &rec,
                &ctx.cfg.search,
                prover,
                ctx.verifier.as_ref(),
                ctx.clock.as_ref(),
            )
            .await;
            (rec, res)
        })
        .buffered(ctx.cfg.concurrency);
    let mut aborted = 0;
    while let Some((mut rec, res)) = results.next().await {
        match res {
            Ok(outcome) => {
                let (rec, pair) = finalize(rec, &outcome, ctx.clock.now())?;
                if let Some(pair) = pair {
                    store.upsert_pair(&pair)?;
                }
                store.put_record(&rec)?;
            }
            Err(e @ (SearchError::Gateway(_) | SearchError::Verifier(_))) => {
                aborted += 1;
                tracing::warn!(record = %rec.id, error = %e, "search aborted; record stays queued");
                rec.push(
                    ctx.clock.now(),
                    AuditEvent::SearchAborted {
                        error: e.to_string(),
                    },
                );
                store.put_record(&rec)?;
            }
            Err(e) => return Err(e.into()),
        }
    }
    if aborted > 0 {
        return Err(PipelineError::SearchIncomplete(aborted));
    }
    Ok(())
}

/// Runs iterations `first..first + count` until the stopping rule fires.
/// `scores` supplies benchmark pass rates for an iteration, if any.
pub async fn run_loop<F>(
    ctx: &PipelineContext,
    store: &mut DatasetStore,
    corpus: &[InformalProblem],
    first: u32,
    count: u32,
    mut scores: F,
) -> Result<Vec<IterationManifest>, PipelineError>
where
    F: FnMut(u32) -> BTreeMap<String, f64>,
{
    let mut out = Vec::new();
    for iteration in first..first + count {
        let m = run_iteration(ctx, store, corpus, iteration, scores(iteration)).await?;
        tracing::info!(
            iteration,
            new_pairs = m.new_pairs,
            cumulative = m.cumulative_pairs,
            "iteration finished"
        );
        out.push(m);
        let history: Vec<IterationManifest> = latest_per_iteration(store.manifests());
        if ctx.cfg.stop.should_stop(&history) {
            tracing::info!(iteration, "improvements are marginal; stopping");
            break;
        }
    }
    Ok(out)
}

/// Last manifest recorded for each iteration, in iteration order.
pub fn latest_per_iteration(manifests: &[IterationManifest]) -> Vec<IterationManifest> {
    let mut by_it: BTreeMap<u32, &IterationManifest> = BTreeMap::new();
    for m in manifests {
        by_it.insert(m.iteration, m);
    }
    by_it.into_values().cloned().collect()
}
