use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use proptest::prelude::*;
use synthproof::clock::LogicalClock;
use synthproof::dataset::DatasetStore;
use synthproof::evaluate::{
    cumulative_pass, pass_at_k, run_benchmark, AttemptLedger, BenchmarkOptions, BenchmarkProblem,
    ProblemKey, Split,
};
use synthproof::gateway::GatewayError;
use synthproof::record::{Polarity, SearchEvent, TheoremProofPair, Verdict, VerificationOutcome};
use synthproof::search::{dual_search, DualSearchConfig, ProofSampler};
use synthproof::statement::{parse_statement, FormalStatement};
use synthproof::verifier::cache::ResultCache;
use synthproof::verifier::checker::{MockChecker, MockRule};
use synthproof::verifier::{
    strip_prefix, ProofVerifier, VerificationJob, VerifierConfig, VerifierError, VerifierPool,
};

fn paused_runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_current_thread()
        .enable_time()
        .start_paused(true)
        .build()
        .unwrap()
}

fn outcome(verdict: Verdict) -> VerificationOutcome {
    VerificationOutcome {
        verdict,
        diagnostics: vec![],
        wall_time: 0.5,
        from_cache: false,
    }
}

fn any_verdict() -> impl Strategy<Value = Verdict> {
    prop_oneof![
        Just(Verdict::Proved),
        Just(Verdict::Failed),
        Just(Verdict::Timeout),
        Just(Verdict::VerifierCrash),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cache_keeps_first_deterministic_verdict(ops in prop::collection::vec((0u8..6, any_verdict()), 0..40)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let mut model: HashMap<String, Verdict> = HashMap::new();
        {
            let cache = ResultCache::open(&path, "tc", "ml").unwrap();
            for (key, verdict) in &ops {
                let key = format!("k{key}");
                if cache.get(&key).is_none() {
                    cache.put(&key, &outcome(*verdict));
                    if verdict.is_cacheable() {
                        model.insert(key, *verdict);
                    }
                }
            }
        }
        let cache = ResultCache::open(&path, "tc", "ml").unwrap();
        prop_assert_eq!(cache.len(), model.len());
        for k in 0u8..6 {
            let key = format!("k{k}");
            let got = cache.get(&key);
            prop_assert_eq!(got.as_ref().map(|o| o.verdict), model.get(&key).copied());
            prop_assert!(got.is_none_or(|o| o.from_cache));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pool_accounting_identity(pool_size in 1usize..5, jobs in prop::collection::vec((0u8..5, any::<bool>()), 1..40)) {
        let rt = paused_runtime();
        rt.block_on(async move {
            let rules = vec![
                MockRule::contains("slow-ok", Verdict::Proved).with_delay(30),
                MockRule::contains("slow-bad", Verdict::Failed).with_delay(20),
                MockRule::contains("crash", Verdict::VerifierCrash).with_delay(5),
                MockRule::contains("stall", Verdict::Timeout).with_delay(10),
            ];
            let cfg = VerifierConfig { pool_size, ..VerifierConfig::default() };
            let pool = Arc::new(
                VerifierPool::start(cfg, Arc::new(MockChecker::new(rules)), Arc::new(ResultCache::in_memory())).unwrap(),
            );
            let names = ["slow-ok", "slow-bad", "crash", "stall", "plain"];
            let mut handles = Vec::new();
            for (i, (kind, abort)) in jobs.iter().enumerate() {
                let pool = pool.clone();
                // Half the sources repeat, which exercises the cache.
                let src = format!("example : True := by\n  {} {}", names[*kind as usize], i % 3);
                let h = tokio::spawn(async move { pool.verify(VerificationJob::for_candidate(&src)).await });
                handles.push((h, *abort, *kind));
            }
            tokio::task::yield_now().await;
            for (h, abort, _) in &handles {
                if *abort {
                    h.abort();
                }
            }
            for (h, _, kind) in handles {
                if let Ok(res) = h.await {
                    let v = res.unwrap().verdict;
                    let expected = [Verdict::Proved, Verdict::Failed, Verdict::VerifierCrash, Verdict::Timeout, Verdict::Failed][kind as usize];
                    assert_eq!(v, expected);
                }
            }
            for _ in 0..1000 {
                let s = pool.stats();
                if s.in_flight == 0 && s.running == 0 {
                    break;
                }
                tokio::time::sleep(Duration::from_millis(5)).await;
            }
            let s = pool.stats();
            assert_eq!(s.jobs, jobs.len() as u64);
            assert_eq!(s.in_flight, 0);
            assert_eq!(s.proved + s.failed + s.timeouts + s.crashes + s.cancelled, s.jobs - s.in_flight);
            assert!(s.peak_processes <= pool_size as u64, "{s:?}");
            assert!(s.launches + s.cache_hits + s.cancelled >= s.jobs, "{s:?}");
        });
    }
}

fn ident() -> impl Strategy<Value = String> {
    prop::sample::select(vec!["x", "y", "n", "a₁", "θ", "f"]).prop_map(String::from)
}

fn term() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        ident(),
        (0u32..100).prop_map(|n| n.to_string()),
        ident().prop_map(|v| format!("({v} : ℝ)")),
    ];
    leaf.prop_recursive(3, 12, 3, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("{a} + {b}")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} * {b})")),
            (ident(), inner.clone()).prop_map(|(v, b)| format!("(∀ {v} : ℕ, {b} = {b})")),
            (inner.clone(), inner).prop_map(|(a, b)| format!("{{{a}, {b}}}")),
        ]
    })
}

fn binder() -> impl Strategy<Value = String> {
    prop_oneof![
        ident().prop_map(|v| format!("({v} : ℝ)")),
        (ident(), term()).prop_map(|(v, t)| format!("(h{v} : {t} = {t})")),
        ident().prop_map(|v| format!("{{{v} : ℕ}}")),
        Just("[Fact (1 < 2)]".to_string()),
    ]
}

fn statement() -> impl Strategy<Value = (String, Option<String>, String, String)> {
    (
        prop::sample::select(vec!["example", "theorem", "lemma"]),
        "[a-z][a-z0-9_]{0,8}",
        prop::collection::vec(binder(), 0..4),
        (term(), term()).prop_map(|(a, b)| format!("{a} = {b}")),
    )
        .prop_map(|(kw, name, binders, goal)| {
            let name = (kw != "example").then_some(name);
            let binders = binders.join(" ");
            let mut src = kw.to_string();
            if let Some(n) = &name {
                src.push(' ');
                src.push_str(n);
            }
            if !binders.is_empty() {
                src.push(' ');
                src.push_str(&binders);
            }
            src.push_str(" : ");
            src.push_str(&goal);
            (src, name, binders, goal)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn parser_recovers_generated_parts((src, name, binders, goal) in statement(), proof in prop::option::of("  [a-z]{1,8}")) {
        let input = match &proof {
            Some(p) => format!("{src} := by\n{p}"),
            None => src.clone(),
        };
        let s = parse_statement(&input).unwrap();
        prop_assert_eq!(&s.name, &name);
        prop_assert_eq!(&s.binders, &binders);
        prop_assert_eq!(&s.goal, &goal);
        prop_assert_eq!(&s.raw, &src);
        let f = s.rewrite_goal_to_false();
        prop_assert_eq!(f.rewrite_goal_to_false(), f.clone());
        prop_assert_eq!(&parse_statement(&f.raw).unwrap().binders, &binders);
        let n = s.negate();
        prop_assert_eq!(parse_statement(&n.raw).unwrap().goal, format!("¬ ({goal})"));
    }

    #[test]
    fn hash_ignores_layout_and_names((src, _, binders, goal) in statement(), spaces in prop::collection::vec(1usize..4, 64)) {
        let s = parse_statement(&src).unwrap();
        let mut i = 0;
        let stretched: String = src
            .split(' ')
            .map(|w| {
                i += 1;
                format!("{w}{}", if i % 2 == 0 { "\n  " } else { " " }.repeat(spaces[i % spaces.len()]))
            })
            .collect::<String>();
        let t = parse_statement(stretched.trim_end()).unwrap();
        prop_assert_eq!(s.content_hash(), t.content_hash());
        let renamed = parse_statement(&format!("theorem other_name {binders} : {goal}")).unwrap();
        prop_assert_eq!(s.content_hash(), renamed.content_hash());
        let changed = parse_statement(&format!("example {binders} : {goal} ∧ True")).unwrap();
        prop_assert_ne!(s.content_hash(), changed.content_hash());
    }
}

/// Reference pass@k: direct scan of the first k verdicts.
fn brute_pass(matrix: &[Vec<bool>], k: usize) -> f64 {
    if matrix.is_empty() {
        return 0.0;
    }
    let mut solved = 0usize;
    for row in matrix {
        let mut hit = false;
        for v in row.iter().take(k) {
            if *v {
                hit = true;
            }
        }
        if hit {
            solved += 1;
        }
    }
    solved as f64 / matrix.len() as f64
}

fn ledger_of(matrix: &[Vec<bool>]) -> AttemptLedger {
    let rows: Vec<(String, Vec<Verdict>)> = matrix
        .iter()
        .enumerate()
        .map(|(i, r)| {
            (
                format!("p{i:03}"),
                r.iter()
                    .map(|b| if *b { Verdict::Proved } else { Verdict::Failed })
                    .collect(),
            )
        })
        .collect();
    AttemptLedger::from_verdicts(
        ProblemKey {
            suite: "s".into(),
            split: Split::Test,
        },
        &rows,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn pass_at_k_matches_scan_and_is_monotone(matrix in prop::collection::vec(prop::collection::vec(prop::bool::weighted(0.08), 0..30), 0..20)) {
        let ledger = ledger_of(&matrix);
        let mut prev = 0.0;
        for k in 1..=32 {
            let r = pass_at_k(&ledger, k as u32).unwrap().rate;
            prop_assert_eq!(r, brute_pass(&matrix, k));
            prop_assert!(r >= prev);
            prev = r;
        }
        let max = matrix.iter().map(Vec::len).max().unwrap_or(0).max(1) as u32;
        prop_assert_eq!(pass_at_k(&ledger, max).unwrap().rate, cumulative_pass(&[&ledger]));
    }

    #[test]
    fn store_keeps_one_pair_per_statement(picks in prop::collection::vec((0usize..8, 0usize..3), 0..40)) {
        let dir = tempfile::tempdir().unwrap();
        let mut store = DatasetStore::open(&dir.path().join("s")).unwrap();
        let mut first: BTreeMap<String, String> = BTreeMap::new();
        for (stmt, proof) in &picks {
            // Different names and spacing for the same statement collapse to one hash.
            let src = format!("theorem t{proof}  (x : ℕ)   :  x + {stmt} = {stmt} + x");
            let pair = TheoremProofPair::new(parse_statement(&src).unwrap(), format!("  omega -- {proof}"), Polarity::Original, 0);
            let inserted = store.upsert_pair(&pair).unwrap();
            prop_assert_eq!(inserted, !first.contains_key(&pair.content_hash));
            first.entry(pair.content_hash.clone()).or_insert(pair.proof_body.clone());
        }
        let distinct: BTreeSet<usize> = picks.iter().map(|(s, _)| *s).collect();
        prop_assert_eq!(store.pair_count(), distinct.len());
        drop(store);
        let store = DatasetStore::open(&dir.path().join("s")).unwrap();
        for p in store.pairs() {
            prop_assert_eq!(Some(&p.proof_body), first.get(&p.content_hash));
        }
    }
}

struct Labeled;

#[async_trait]
impl ProofSampler for Labeled {
    async fn sample(
        &self,
        _s: &FormalStatement,
        pol: Polarity,
        i: u32,
    ) -> Result<String, GatewayError> {
        Ok(format!("  {pol} {i}"))
    }
}

/// Proves the listed (polarity, index) attempts; every check takes a
/// pseudo-random number of milliseconds.
struct Table {
    provable: HashSet<(Polarity, u32)>,
    seed: u64,
}

#[async_trait]
impl ProofVerifier for Table {
    async fn verify(&self, job: VerificationJob) -> Result<VerificationOutcome, VerifierError> {
        let body = strip_prefix(&job.source)
            .unwrap()
            .rsplit("by\n")
            .next()
            .unwrap()
            .trim();
        let (pol, idx) = body.split_once(' ').unwrap();
        let pol = if pol == "original" {
            Polarity::Original
        } else {
            Polarity::Negation
        };
        let idx: u32 = idx.parse().unwrap();
        let h = self.seed
            ^ (u64::from(idx) * 0x9e37_79b9)
            ^ if pol == Polarity::Original { 0 } else { 0x5555 };
        tokio::time::sleep(Duration::from_millis(1 + h % 17)).await;
        let verdict = if self.provable.contains(&(pol, idx)) {
            Verdict::Proved
        } else {
            Verdict::Failed
        };
        Ok(outcome(verdict))
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn dual_search_respects_budget_and_window(
        k in 1u32..12,
        p in 1u32..4,
        orig in prop::option::of(0u32..14),
        neg in prop::option::of(0u32..14),
        seed in any::<u64>(),
    ) {
        let provable: HashSet<(Polarity, u32)> = orig
            .map(|i| (Polarity::Original, i))
            .into_iter()
            .chain(neg.map(|i| (Polarity::Negation, i)))
            .collect();
        let stmt = parse_statement("example (x : ℕ) : x = x").unwrap();
        let cfg = DualSearchConfig { k, stream_parallelism: p, per_attempt_timeout_s: 60.0 };
        let out = paused_runtime()
            .block_on(dual_search("r", &stmt, &cfg, &Labeled, &Table { provable, seed }, &LogicalClock::new()))
            .unwrap();
        let mut started = [0u32; 2];
        let mut first_success: Option<u64> = None;
        for e in &out.events {
            match e {
                SearchEvent::AttemptStarted { seq, polarity, .. } => {
                    prop_assert!(first_success.is_none_or(|s| *seq < s), "start after success");
                    started[usize::from(*polarity == Polarity::Negation)] += 1;
                }
                SearchEvent::AttemptFinished { seq, verdict: Verdict::Proved, .. } => {
                    first_success.get_or_insert(*seq);
                }
                _ => {}
            }
        }
        prop_assert!(started[0] <= k && started[1] <= k);
        let reachable = |x: Option<u32>| x.filter(|i| *i < k);
        let expect_success = reachable(orig).is_some() || reachable(neg).is_some();
        prop_assert_eq!(first_success.is_some(), expect_success);
        for (s, idx) in [(0usize, reachable(orig)), (1, reachable(neg))] {
            if let Some(j) = idx {
                // Success at 1-based attempt j + 1 caps the other stream.
                prop_assert!(started[1 - s] <= j + 1 + p, "{started:?} j={j} p={p}");
            }
        }
    }
}

fn tiny_suite(n: usize) -> Vec<BenchmarkProblem> {
    (0..n)
        .map(|i| BenchmarkProblem {
            id: format!("q{i}"),
            statement: parse_statement(&format!("theorem q{i} : {i} = {i}")).unwrap(),
            split: if i % 2 == 0 {
                Split::Valid
            } else {
                Split::Test
            },
            suite: "s".into(),
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn ledger_conserves_attempts_under_concurrency(problems in 1usize..30, n in 1u32..12, conc in 1usize..16, seed in any::<u64>()) {
        let suite = tiny_suite(problems);
        let total = paused_runtime().block_on(async {
            let mut ledger = AttemptLedger::new(&suite);
            let opts = BenchmarkOptions { n, concurrency: conc, ..Default::default() };
            let verifier = Table { provable: HashSet::new(), seed };
            run_benchmark(&suite, &opts, &Labeled, &verifier, &mut ledger).await.unwrap();
            for p in &suite {
                let idx: Vec<u32> = ledger.attempts(&p.id).iter().map(|a| a.sample_index).collect();
                assert_eq!(idx, (0..n).collect::<Vec<_>>());
            }
            ledger.total_attempts()
        });
        prop_assert_eq!(total, problems * n as usize);
    }
}
