use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context};
use synthproof::clock::{Clock, FixedClock, SystemClock};
use synthproof::dataset::{
    export_training_file, load_corpus, stage_counts, DatasetStore, StorageError,
};
use synthproof::evaluate::{
    load_suite, pass_at_k, report, run_benchmark, AttemptLedger, BenchmarkOptions,
};
use synthproof::gateway::{
    CompletionBackend, Gateway, HttpBackend, HttpBackendConfig, MockBackend,
};
use synthproof::pipeline::{self, latest_per_iteration, PipelineContext, PipelineError};
use synthproof::search::GatewayProver;
use synthproof::statement::InformalProblem;
use synthproof::verifier::cache::ResultCache;
use synthproof::verifier::checker::{Checker, MockChecker, ProcessChecker};
use synthproof::verifier::VerifierPool;
use tracing_subscriber::layer::SubscriberExt;
use tracing_subscriber::util::SubscriberInitExt;
use tracing_subscriber::{EnvFilter, Layer};

use crate::config::{load_scores, BackendKind, CliConfig, ClockKind, VerifierKind};
use crate::{Cli, Command};

pub const CHECKER_ENV: &str = "SYNTHPROOF_CHECKER";
pub const FAULT_ENV: &str = "SYNTHPROOF_FAULT_CRASH_AFTER";

const FUNNEL: [&str; 13] = [
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
];

#[derive(Debug)]
pub enum Failure {
    /// Bad flags, config or inputs: exit 2.
    Usage(anyhow::Error),
    /// Anything that went wrong while running: exit 1.
    Runtime(anyhow::Error),
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

fn pipeline_failure(e: PipelineError) -> Failure {
    match e {
        PipelineError::Config(_) => usage(e),
        e => runtime(e),
    }
}

fn storage_failure(e: StorageError) -> Failure {
    runtime(e)
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = match &cli.global.config {
        Some(p) => CliConfig::load(p).map_err(usage)?,
        None => CliConfig::default(),
    };
    apply_overrides(&mut cfg, &cli)?;
    cfg.pipeline.validate().map_err(usage)?;
    cfg.verifier.pool.validate().map_err(usage)?;

    if cli.global.dry_run {
        print!("{}", plan(&cfg, &cli));
        return Ok(());
    }
    check_inputs(&cfg, &cli)?;
    init_logging(&cfg, &cli)?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(runtime)?;
    rt.block_on(dispatch(cfg, cli))
}

fn apply_overrides(cfg: &mut CliConfig, cli: &Cli) -> Result<(), Failure> {
    let g = &cli.global;
    if let Some(s) = &g.store {
        cfg.run.store = Some(s.clone());
    }
    if let Some(b) = g.backend {
        cfg.backend.kind = b;
    }
    if let Some(m) = &g.mock_script {
        cfg.backend.mock_script = Some(m.clone());
    }
    if let Some(l) = &g.log_file {
        cfg.run.log_file = Some(l.clone());
    }
    if let Ok(cmd) = std::env::var(CHECKER_ENV) {
        let parts: Vec<String> = cmd.split_whitespace().map(String::from).collect();
        if parts.is_empty() {
            return Err(usage(anyhow!("{CHECKER_ENV} is set but empty")));
        }
        cfg.verifier.pool.checker_command = parts;
    }
    match &cli.command {
        Command::Formalize { corpus, .. } | Command::Iterate { corpus, .. } if corpus.is_some() => {
            cfg.run.corpus = corpus.clone();
        }
        _ => {}
    }
    match &cli.command {
        Command::Prove {
            budget: Some(k), ..
        }
        | Command::Iterate {
            budget: Some(k), ..
        } => {
            if *k == 0 {
                return Err(usage(anyhow!("--budget must be at least 1")));
            }
            cfg.pipeline.search.k = *k;
        }
        Command::Filter {
            false_budget: Some(b),
            ..
        } => cfg.pipeline.false_test_budget = *b,
        Command::Eval {
            suite,
            samples,
            k,
            ledger,
            run_id,
            greedy,
            ..
        } => {
            if let Some(s) = suite {
                cfg.eval.suite = Some(s.clone());
            }
            if let Some(n) = samples {
                cfg.eval.samples = *n;
            }
            if let Some(k) = k {
                cfg.eval.k = k.clone();
            }
            if let Some(l) = ledger {
                cfg.eval.ledger = Some(l.clone());
            }
            if let Some(r) = run_id {
                cfg.eval.run_id = r.clone();
            }
            if *greedy {
                cfg.eval.samples = 1;
                cfg.eval.temperature = Some(0.0);
            }
            if cfg.eval.samples == 0 {
                return Err(usage(anyhow!("--samples must be at least 1")));
            }
            if cfg.eval.k.is_empty() || cfg.eval.k.contains(&0) {
                return Err(usage(anyhow!("every k must be at least 1")));
            }
        }
        _ => {}
    }
    Ok(())
}

fn init_logging(cfg: &CliConfig, cli: &Cli) -> Result<(), Failure> {
    let path = cfg.run.log_file.clone().or_else(|| match cli.command {
        Command::Stats => None,
        _ => cfg.run.store.as_ref().map(|s| s.join("log.jsonl")),
    });
    let file_layer = match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)
                    .with_context(|| format!("creating {}", dir.display()))
                    .map_err(runtime)?;
            }
            let f = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&p)
                .with_context(|| format!("opening log file {}", p.display()))
                .map_err(runtime)?;
            Some(
                tracing_subscriber::fmt::layer()
                    .json()
                    .with_writer(Arc::new(f))
                    .with_filter(EnvFilter::new("info")),
            )
        }
        None => None,
    };
    let console = tracing_subscriber::fmt::layer()
        .with_writer(std::io::stderr)
        .with_target(false)
        .with_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")));
    let _ = tracing_subscriber::registry()
        .with(file_layer)
        .with(console)
        .try_init();
    Ok(())
}

/// Fails on missing input files before anything is written.
fn check_inputs(cfg: &CliConfig, cli: &Cli) -> Result<(), Failure> {
    let needed = match cli.command {
        Command::Formalize { .. } | Command::Iterate { .. } => Some(("corpus", &cfg.run.corpus)),
        Command::Eval { .. } => Some(("suite", &cfg.eval.suite)),
        _ => None,
    };
    if let Some((what, path)) = needed {
        match path {
            None => return Err(usage(anyhow!("no {what} given (use --{what})"))),
            Some(p) if !p.is_file() => {
                return Err(usage(anyhow!("{what} file {} does not exist", p.display())))
            }
            Some(_) => {}
        }
    }
    if !matches!(cli.command, Command::Eval { .. }) {
        store_path(cfg)?;
    }
    Ok(())
}

fn store_path(cfg: &CliConfig) -> Result<PathBuf, Failure> {
    cfg.run
        .store
        .clone()
        .ok_or_else(|| usage(anyhow!("no store given (use --store or run.store)")))
}

fn corpus(cfg: &CliConfig) -> Result<Vec<InformalProblem>, Failure> {
    let path = cfg
        .run
        .corpus
        .as_ref()
        .ok_or_else(|| usage(anyhow!("no corpus given (use --corpus or run.corpus)")))?;
    if !path.is_file() {
        return Err(usage(anyhow!(
            "corpus file {} does not exist",
            path.display()
        )));
    }
    load_corpus(path).map_err(usage)
}

fn open_store(cfg: &CliConfig) -> Result<DatasetStore, Failure> {
    let mut store = DatasetStore::open(&store_path(cfg)?).map_err(storage_failure)?;
    if let Ok(v) = std::env::var(FAULT_ENV) {
        let n: u64 = v
            .parse()
            .map_err(|_| usage(anyhow!("{FAULT_ENV} must be a number, got {v:?}")))?;
        store.set_fault_after(Some(n));
    }
    Ok(store)
}

fn gateway(cfg: &CliConfig) -> Result<Arc<Gateway>, Failure> {
    let backend: Arc<dyn CompletionBackend> = match cfg.backend.kind {
        BackendKind::Mock => {
            let path = cfg.backend.mock_script.as_ref().ok_or_else(|| {
                usage(anyhow!(
                    "the mock backend needs --mock-script or backend.mock_script"
                ))
            })?;
            Arc::new(
                MockBackend::load(path)
                    .with_context(|| format!("loading {}", path.display()))
                    .map_err(usage)?,
            )
        }
        BackendKind::Http => {
            let endpoint = cfg
                .backend
                .endpoint
                .clone()
                .ok_or_else(|| usage(anyhow!("the http backend needs backend.endpoint")))?;
            if std::env::var(&cfg.backend.auth_env).is_err() {
                tracing::warn!(var = %cfg.backend.auth_env, "no auth token in the environment");
            }
            Arc::new(
                HttpBackend::new(&HttpBackendConfig {
                    endpoint,
                    auth_env: Some(cfg.backend.auth_env.clone()),
                    request_timeout_s: cfg.backend.request_timeout_s,
                })
                .map_err(runtime)?,
            )
        }
    };
    Ok(Arc::new(Gateway::new(
        backend,
        cfg.backend.retry.clone(),
        cfg.backend.max_in_flight,
    )))
}

fn verifier(cfg: &CliConfig) -> Result<Arc<VerifierPool>, Failure> {
    let pool = &cfg.verifier.pool;
    let checker: Arc<dyn Checker> = match cfg.verifier.kind {
        VerifierKind::Mock => {
            let rules = match &cfg.verifier.mock_rules {
                Some(p) => {
                    let text = std::fs::read_to_string(p)
                        .with_context(|| format!("reading mock rules {}", p.display()))
                        .map_err(usage)?;
                    MockChecker::parse_rules(&text)
                        .with_context(|| format!("parsing mock rules {}", p.display()))
                        .map_err(usage)?
                }
                None => Vec::new(),
            };
            Arc::new(MockChecker::new(rules))
        }
        VerifierKind::Process => Arc::new(ProcessChecker::from_config(pool)),
    };
    let cache = match &pool.cache_path {
        Some(p) => ResultCache::open(p, &pool.toolchain_tag, &pool.mathlib_commit)
            .with_context(|| format!("opening verifier cache {}", p.display()))
            .map_err(runtime)?,
        None => ResultCache::in_memory(),
    };
    Ok(Arc::new(
        VerifierPool::start(pool.clone(), checker, Arc::new(cache)).map_err(runtime)?,
    ))
}

fn clock(cfg: &CliConfig) -> Arc<dyn Clock> {
    match cfg.run.clock {
        ClockKind::System => Arc::new(SystemClock),
        ClockKind::Frozen => Arc::new(FixedClock(cfg.run.frozen_at)),
    }
}

fn context(cfg: &CliConfig) -> Result<(PipelineContext, Arc<VerifierPool>), Failure> {
    let pool = verifier(cfg)?;
    let ctx = PipelineContext {
        cfg: cfg.pipeline.clone(),
        config_text: cfg.snapshot(),
        gateway: gateway(cfg)?,
        verifier: pool.clone(),
        clock: clock(cfg),
    };
    Ok((ctx, pool))
}

fn save_pool_stats(dir: &Path, pool: &VerifierPool) {
    let path = dir.join("verifier_stats.json");
    let text = serde_json::to_string_pretty(&pool.stats()).expect("stats serialize");
    if let Err(e) = std::fs::write(&path, text + "\n") {
        tracing::warn!(path = %path.display(), error = %e, "could not save verifier statistics");
    }
}

fn problem_count(store: &DatasetStore, iteration: u32) -> usize {
    store
        .records_in(iteration)
        .map(|r| r.origin.as_str())
        .collect::<BTreeSet<_>>()
        .len()
}

fn funnel_text(counts: &BTreeMap<String, u64>) -> String {
    let width = FUNNEL.iter().map(|s| s.len()).max().unwrap_or(0);
    FUNNEL
        .iter()
        .map(|k| format!("  {k:<width$}  {}\n", counts.get(*k).copied().unwrap_or(0)))
        .collect()
}

fn print_counts(store: &DatasetStore, iteration: u32, problems: usize) {
    println!("iteration {iteration}");
    print!(
        "{}",
        funnel_text(&stage_counts(problems, store.records_in(iteration)))
    );
}

async fn dispatch(cfg: CliConfig, cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Formalize { iteration, .. } => {
            let corpus = corpus(&cfg)?;
            let mut store = open_store(&cfg)?;
            let (ctx, pool) = context(&cfg)?;
            let res = pipeline::formalize_stage(&ctx, &mut store, &corpus, iteration).await;
            save_pool_stats(store.dir(), &pool);
            res.map_err(pipeline_failure)?;
            print_counts(&store, iteration, corpus.len());
        }
        Command::Filter { iteration, .. } => {
            let mut store = open_store(&cfg)?;
            let (ctx, pool) = context(&cfg)?;
            let mut res = pipeline::score_stage(&ctx, &mut store, iteration).await;
            if res.is_ok() {
                res = pipeline::rejection_stage(&ctx, &mut store, iteration).await;
            }
            save_pool_stats(store.dir(), &pool);
            res.map_err(pipeline_failure)?;
            print_counts(&store, iteration, problem_count(&store, iteration));
        }
        Command::Prove { iteration, .. } => {
            let mut store = open_store(&cfg)?;
            let (ctx, pool) = context(&cfg)?;
            let res = pipeline::search_stage(&ctx, &mut store, iteration).await;
            save_pool_stats(store.dir(), &pool);
            print_counts(&store, iteration, problem_count(&store, iteration));
            res.map_err(pipeline_failure)?;
            println!("pairs {}", store.pair_count());
        }
        Command::Iterate { iterations, .. } => iterate(&cfg, cli.global.resume, iterations).await?,
        Command::Eval {
            split, report: out, ..
        } => eval(&cfg, cli.global.resume, split, out).await?,
        Command::Stats => stats(&cfg)?,
    }
    Ok(())
}

fn first_unfinished(store: &DatasetStore) -> u32 {
    (0..)
        .find(|i| store.manifest(*i).is_none())
        .expect("finitely many manifests")
}

pub fn export_path(store: &Path, iteration: u32) -> PathBuf {
    store
        .join("exports")
        .join(format!("train-{iteration:03}.jsonl"))
}

async fn iterate(cfg: &CliConfig, resume: bool, iterations: u32) -> Result<(), Failure> {
    let corpus = corpus(cfg)?;
    let scores = match &cfg.run.scores {
        Some(p) => load_scores(p).map_err(usage)?,
        None => BTreeMap::new(),
    };
    let mut store = open_store(cfg)?;
    let used = store.records().next().is_some() || !store.manifests().is_empty();
    if used && !resume {
        return Err(usage(anyhow!(
            "store {} already holds a run; pass --resume to continue it",
            store.dir().display()
        )));
    }
    let first = first_unfinished(&store);
    if first >= iterations {
        println!("all {iterations} iteration(s) already finished");
    } else {
        let (ctx, pool) = context(cfg)?;
        let res = pipeline::run_loop(&ctx, &mut store, &corpus, first, iterations - first, |i| {
            scores.get(&i).cloned().unwrap_or_default()
        })
        .await;
        save_pool_stats(store.dir(), &pool);
        res.map_err(pipeline_failure)?;
    }
    let exports = store.dir().join("exports");
    std::fs::create_dir_all(&exports).map_err(runtime)?;
    let history = latest_per_iteration(store.manifests());
    for m in &history {
        match export_training_file(&store, m.iteration, &export_path(store.dir(), m.iteration)) {
            Ok(_) | Err(StorageError::EmptyDataset) => {}
            Err(e) => return Err(storage_failure(e)),
        }
        println!(
            "iteration {}: formalized {}, queued {}, new pairs {}, cumulative pairs {}",
            m.iteration,
            m.count("formalized"),
            m.count("queued"),
            m.new_pairs,
            m.cumulative_pairs
        );
    }
    if cfg.pipeline.stop.should_stop(&history) {
        println!("stopping rule met");
    }
    Ok(())
}

async fn eval(
    cfg: &CliConfig,
    resume: bool,
    split: Option<synthproof::evaluate::Split>,
    report_path: Option<PathBuf>,
) -> Result<(), Failure> {
    let suite_path = cfg
        .eval
        .suite
        .as_ref()
        .ok_or_else(|| usage(anyhow!("no suite given (use --suite or eval.suite)")))?;
    if !suite_path.is_file() {
        return Err(usage(anyhow!(
            "suite file {} does not exist",
            suite_path.display()
        )));
    }
    let mut suite = load_suite(suite_path).map_err(usage)?;
    if let Some(s) = split {
        suite.retain(|p| p.split == s);
    }
    let ledger_path = cfg
        .eval
        .ledger
        .clone()
        .or_else(|| cfg.run.store.as_ref().map(|s| s.join("ledger.jsonl")));
    let mut ledger = match &ledger_path {
        Some(p) => AttemptLedger::open(p, &suite).map_err(runtime)?,
        None => AttemptLedger::new(&suite),
    };
    let started = suite
        .iter()
        .any(|p| ledger.attempts_in_run(&p.id, &cfg.eval.run_id) > 0);
    if started && !resume {
        return Err(usage(anyhow!(
            "ledger already has attempts for run {:?}; pass --resume or choose another --run-id",
            cfg.eval.run_id
        )));
    }
    let gateway = gateway(cfg)?;
    let pool = verifier(cfg)?;
    let mut params = cfg.pipeline.proving.with_samples(1);
    if let Some(t) = cfg.eval.temperature {
        params.temperature = t;
    }
    let route = cfg.eval.route.clone().unwrap_or_else(|| {
        cfg.pipeline
            .routes
            .prover
            .last()
            .cloned()
            .unwrap_or_default()
    });
    let prover = GatewayProver::new(gateway, route, params).with_style(cfg.pipeline.proof_prompt);
    let opts = BenchmarkOptions {
        run_id: cfg.eval.run_id.clone(),
        n: cfg.eval.samples,
        early_stop: cfg.eval.early_stop,
        concurrency: cfg.eval.concurrency,
        attempt_timeout_s: cfg.pipeline.search.per_attempt_timeout_s,
    };
    let res = run_benchmark(&suite, &opts, &prover, pool.as_ref(), &mut ledger).await;
    if let Some(dir) = cfg.run.store.as_ref().filter(|d| d.is_dir()) {
        save_pool_stats(dir, &pool);
    }
    res.map_err(runtime)?;
    let ids: BTreeSet<&str> = suite.iter().map(|p| p.id.as_str()).collect();
    let ledger = ledger.subset(|id| ids.contains(id));
    for &k in &cfg.eval.k {
        if let Some(w) = pass_at_k(&ledger, k).map_err(usage)?.warning() {
            tracing::warn!("{w}");
        }
    }
    let table = report(&[(cfg.eval.run_id.clone(), &ledger)], &cfg.eval.k).map_err(usage)?;
    print!("{}", table.to_text());
    if let Some(p) = report_path {
        std::fs::write(&p, table.to_csv())
            .with_context(|| format!("writing report {}", p.display()))
            .map_err(runtime)?;
    }
    Ok(())
}

fn stats(cfg: &CliConfig) -> Result<(), Failure> {
    let path = store_path(cfg)?;
    if !path.is_dir() {
        return Err(usage(anyhow!("store {} does not exist", path.display())));
    }
    let store = DatasetStore::open(&path).map_err(storage_failure)?;
    let history = latest_per_iteration(store.manifests());
    if history.is_empty() {
        println!("no finished iterations");
    }
    for m in &history {
        println!(
            "iteration {} (route {}, config {}): new pairs {}, cumulative pairs {}{}",
            m.iteration,
            m.route,
            &m.config_digest[..m.config_digest.len().min(12)],
            m.new_pairs,
            m.cumulative_pairs,
            if m.funnel_holds() {
                ""
            } else {
                " [funnel mismatch]"
            }
        );
        print!("{}", funnel_text(&m.stage_counts));
    }
    println!("pairs {}", store.pair_count());
    let vs = path.join("verifier_stats.json");
    if let Ok(text) = std::fs::read_to_string(&vs) {
        println!("verifier pool (last run)");
        let v: serde_json::Value = serde_json::from_str(&text).map_err(runtime)?;
        if let Some(obj) = v.as_object() {
            for (k, v) in obj {
                println!("  {k:<14}  {v}");
            }
        }
    }
    Ok(())
}

fn plan(cfg: &CliConfig, cli: &Cli) -> String {
    let mut out = String::new();
    let mut line = |s: String| {
        out.push_str(&s);
        out.push('\n');
    };
    let (name, stages): (&str, &[&str]) = match cli.command {
        Command::Formalize { .. } => ("formalize", &["formalize"]),
        Command::Filter { .. } => ("filter", &["score", "gate", "false-hypothesis test"]),
        Command::Prove { .. } => ("prove", &["dual search", "store pairs"]),
        Command::Iterate { .. } => (
            "iterate",
            &[
                "formalize",
                "score",
                "gate",
                "false-hypothesis test",
                "dual search",
                "manifest",
                "export",
            ],
        ),
        Command::Eval { .. } => ("eval", &["sample", "verify", "ledger", "report"]),
        Command::Stats => ("stats", &["read manifests"]),
    };
    line(format!("plan: {name}"));
    line(format!("  stages: {}", stages.join(" -> ")));
    if matches!(
        cli.command,
        Command::Formalize { .. } | Command::Iterate { .. }
    ) {
        match &cfg.run.corpus {
            Some(p) => match load_corpus(p) {
                Ok(c) => line(format!("  corpus: {} ({} problems)", p.display(), c.len())),
                Err(e) => line(format!("  corpus: {} (unreadable: {e})", p.display())),
            },
            None => line("  corpus: none".into()),
        }
    }
    match &cfg.run.store {
        Some(p) if p.is_dir() => {
            let lines = |f: &str| {
                std::fs::read_to_string(p.join(f))
                    .map(|t| {
                        t.lines()
                            .filter(|l| !l.trim().is_empty())
                            .count()
                            .saturating_sub(1)
                    })
                    .unwrap_or(0)
            };
            line(format!(
                "  store: {} (existing; {} record lines, {} pairs, {} manifests)",
                p.display(),
                lines("records.jsonl"),
                lines("pairs.jsonl"),
                lines("manifests.jsonl")
            ));
        }
        Some(p) => line(format!("  store: {} (new)", p.display())),
        None => line("  store: none".into()),
    }
    match cfg.backend.kind {
        BackendKind::Mock => line(format!(
            "  backend: mock ({})",
            cfg.backend
                .mock_script
                .as_ref()
                .map_or("no script".into(), |p| p.display().to_string())
        )),
        BackendKind::Http => line(format!(
            "  backend: http ({})",
            cfg.backend.endpoint.as_deref().unwrap_or("no endpoint")
        )),
    }
    let v = &cfg.verifier;
    line(format!(
        "  verifier: {} (pool {}, timeout {}s, command {})",
        match v.kind {
            VerifierKind::Mock => "mock",
            VerifierKind::Process => "process",
        },
        v.pool.pool_size,
        v.pool.timeout_s,
        v.pool.checker_command.join(" ")
    ));
    let p = &cfg.pipeline;
    match &cli.command {
        Command::Eval { .. } => line(format!(
            "  samples per problem {}, k {:?}, run {}",
            cfg.eval.samples, cfg.eval.k, cfg.eval.run_id
        )),
        Command::Iterate { iterations, .. } => line(format!(
            "  iterations {iterations}, k {}, stream parallelism {}, false-test budget {}",
            p.search.k, p.search.stream_parallelism, p.false_test_budget
        )),
        _ => line(format!(
            "  k {}, stream parallelism {}, false-test budget {}",
            p.search.k, p.search.stream_parallelism, p.false_test_budget
        )),
    }
    out
}
