//! Benchmark harness: suites, attempt ledgers, pass@k and reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::record::{Polarity, Verdict};
use crate::search::{run_attempt, ProofSampler, SearchError};
use crate::statement::{parse_declaration, FormalStatement};
use crate::verifier::ProofVerifier;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "valid" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (expected valid or test)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkProblem {
    pub id: String,
    pub statement: FormalStatement,
    pub split: Split,
    pub suite: String,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("k must be at least 1")]
    InvalidK,
    #[error("{path}: {message}")]
    Suite { path: PathBuf, message: String },
    #[error("ledger {path}: {message}")]
    Ledger { path: PathBuf, message: String },
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Search(#[from] SearchError),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Splits a Lean source file into its `theorem`/`lemma`/`example`
/// declarations, dropping proofs. Imports, `open`, `set_option`, comments
/// and blank lines between declarations are ignored.
pub fn import_lean_source(
    text: &str,
    suite: &str,
    split: Split,
) -> Result<Vec<BenchmarkProblem>, String> {
    let starts = |l: &str| {
        ["theorem ", "lemma ", "example "]
            .iter()
            .any(|k| l.starts_with(k))
    };
    let mut chunks: Vec<String> = Vec::new();
    let mut current: Option<String> = None;
    let mut in_block_comment = false;
    for line in text.lines() {
        if in_block_comment {
            in_block_comment = !line.contains("-/");
            continue;
        }
        if line.trim_start().starts_with("/-") && current.is_none() {
            in_block_comment = !line.contains("-/");
            continue;
        }
        if starts(line) {
            if let Some(c) = current.take() {
                chunks.push(c);
            }
            current = Some(line.to_string());
        } else if let Some(c) = current.as_mut() {
            let top_level = !line.starts_with([' ', '\t']) && !line.trim().is_empty();
            let directive = [
                "import ",
                "open ",
                "set_option ",
                "namespace ",
                "end ",
                "section",
                "--",
            ]
            .iter()
            .any(|d| line.starts_with(d));
            if top_level && directive {
                chunks.push(current.take().expect("current chunk"));
            } else {
                c.push('\n');
                c.push_str(line);
            }
        }
    }
    chunks.extend(current);
    let mut out = Vec::new();
    for (i, chunk) in chunks.iter().enumerate() {
        let decl =
            parse_declaration(chunk.trim()).map_err(|e| format!("declaration {}: {e}", i + 1))?;
        let id = decl
            .statement
            .name
            .clone()
            .unwrap_or_else(|| format!("{suite}_{split}_{i}"));
        out.push(BenchmarkProblem {
            id,
            statement: decl.statement,
            split,
            suite: suite.to_string(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Deserialize)]
struct SuiteEntry {
    id: String,
    #[serde(default)]
    statement: Option<String>,
    #[serde(default)]
    path: Option<PathBuf>,
    split: Split,
    #[serde(default)]
    suite: Option<String>,
}

/// Loads a suite manifest: JSON lines `{id, statement | path, split, suite?}`.
/// `path` entries point at Lean files (relative to the manifest) and may
/// hold several declarations; each becomes `<id>/<name>` unless the file
/// has exactly one. `suite` defaults to the manifest's file stem.
pub fn load_suite(path: &Path) -> Result<Vec<BenchmarkProblem>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(io(path))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let default_suite = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("suite")
        .to_string();
    let err = |message: String| EvalError::Suite {
        path: path.to_path_buf(),
        message,
    };
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let e: SuiteEntry =
            serde_json::from_str(line).map_err(|x| err(format!("line {}: {x}", n + 1)))?;
        let suite = e.suite.clone().unwrap_or_else(|| default_suite.clone());
        match (&e.statement, &e.path) {
            (Some(s), None) => {
                let decl = parse_declaration(s).map_err(|x| err(format!("{}: {x}", e.id)))?;
                if decl.proof.is_some() {
                    return Err(err(format!(
                        "{}: benchmark statements must not carry a proof",
                        e.id
                    )));
                }
                out.push(BenchmarkProblem {
                    id: e.id,
                    statement: decl.statement,
                    split: e.split,
                    suite,
                });
            }
            (None, Some(p)) => {
                let file = base.join(p);
                let src = std::fs::read_to_string(&file).map_err(io(&file))?;
                let mut problems = import_lean_source(&src, &suite, e.split)
                    .map_err(|x| err(format!("{}: {x}", e.id)))?;
                if problems.len() == 1 {
                    problems[0].id = e.id.clone();
                } else {
                    for p in &mut problems {
                        p.id = format!("{}/{}", e.id, p.id);
                    }
                }
                out.extend(problems);
            }
            _ => {
                return Err(err(format!(
                    "{}: exactly one of statement or path is required",
                    e.id
                )))
            }
        }
    }
    let mut seen = BTreeSet::new();
    for p in &out {
        if !seen.insert(p.id.as_str()) {
            return Err(err(format!("duplicate problem id {}", p.id)));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub problem_id: String,
    pub run_id: String,
    /// Global per problem, across runs.
    pub sample_index: u32,
    pub verdict: Verdict,
    /// Seconds.
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ProblemKey {
    pub suite: String,
    pub split: Split,
}

impl fmt::Display for ProblemKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.suite, self.split)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LedgerHeader {
    schema: String,
    problems: BTreeMap<String, ProblemKey>,
}

const LEDGER_SCHEMA: &str = "synthproof.ledger.v1";

/// Attempts per problem in global sample order, optionally mirrored to an
/// append-only file.
#[derive(Debug, Default)]
pub struct AttemptLedger {
    problems: BTreeMap<String, ProblemKey>,
    attempts: BTreeMap<String, Vec<AttemptRecord>>,
    file: Option<(PathBuf, File)>,
}

impl AttemptLedger {
    pub fn new(suite: &[BenchmarkProblem]) -> Self {
        let mut l = AttemptLedger::default();
        l.add_problems(suite);
        l
    }

    pub fn add_problems(&mut self, suite: &[BenchmarkProblem]) {
        for p in suite {
            self.problems.insert(
                p.id.clone(),
                ProblemKey {
                    suite: p.suite.clone(),
                    split: p.split,
                },
            );
            self.attempts.entry(p.id.clone()).or_default();
        }
    }

    /// Ledger over bare problem ids in one group, for tests and tools.
    pub fn from_verdicts(group: ProblemKey, rows: &[(String, Vec<Verdict>)]) -> Self {
        let mut l = AttemptLedger::default();
        for (id, verdicts) in rows {
            l.problems.insert(id.clone(), group.clone());
            l.attempts.insert(
                id.clone(),
                verdicts
                    .iter()
                    .enumerate()
                    .map(|(i, v)| AttemptRecord {
                        problem_id: id.clone(),
                        run_id: "r0".into(),
                        sample_index: i as u32,
                        verdict: *v,
                        wall_time: 0.0,
                    })
                    .collect(),
            );
        }
        l
    }

    /// Opens or creates a ledger file and loads its attempts. New problems
    /// from `suite` are added to the header on the next [`save_header`](Self::save_header).
    pub fn open(path: &Path, suite: &[BenchmarkProblem]) -> Result<Self, EvalError> {
        let mut l = AttemptLedger::default();
        if path.exists() {
            let bad = |message: String| EvalError::Ledger {
                path: path.to_path_buf(),
                message,
            };
            let reader = BufReader::new(File::open(path).map_err(io(path))?);
            let mut lines = reader.lines();
            if let Some(first) = lines.next() {
                let header: LedgerHeader = serde_json::from_str(&first.map_err(io(path))?)
                    .map_err(|e| bad(format!("header: {e}")))?;
                if header.schema != LEDGER_SCHEMA {
                    return Err(bad(format!("unknown schema {}", header.schema)));
                }
                for (id, key) in header.problems {
                    l.attempts.entry(id.clone()).or_default();
                    l.problems.insert(id, key);
                }
            }
            let mut rows: Vec<String> = lines.collect::<Result<_, _>>().map_err(io(path))?;
            // Drop a final line torn by an interrupted append.
            if rows
                .last()
                .is_some_and(|r| serde_json::from_str::<AttemptRecord>(r).is_err())
            {
                rows.pop();
            }
            for (i, row) in rows.iter().enumerate() {
                if row.trim().is_empty() {
                    continue;
                }
                let rec: AttemptRecord =
                    serde_json::from_str(row).map_err(|e| bad(format!("line {}: {e}", i + 2)))?;
                l.push(rec).map_err(bad)?;
            }
        }
        l.add_problems(suite);
        l.rewrite(path)?;
        Ok(l)
    }

    fn rewrite(&mut self, path: &Path) -> Result<(), EvalError> {
        let mut text = serde_json::to_string(&LedgerHeader {
            schema: LEDGER_SCHEMA.into(),
            problems: self.problems.clone(),
        })
        .expect("ledger header serializes");
        text.push('\n');
        for rows in self.attempts.values() {
            for r in rows {
                text.push_str(&serde_json::to_string(r).expect("attempt serializes"));
                text.push('\n');
            }
        }
        let dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io(dir))?;
        tmp.write_all(text.as_bytes()).map_err(io(path))?;
        tmp.persist(path).map_err(|e| io(path)(e.error))?;
        let f = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(io(path))?;
        self.file = Some((path.to_path_buf(), f));
        Ok(())
    }

    fn push(&mut self, rec: AttemptRecord) -> Result<(), String> {
        let rows = self.attempts.entry(rec.problem_id.clone()).or_default();
        if let Some(last) = rows.last() {
            if rec.sample_index <= last.sample_index {
                return Err(format!(
                    "sample index {} for {} does not follow {}",
                    rec.sample_index, rec.problem_id, last.sample_index
                ));
            }
        }
        rows.push(rec);
        Ok(())
    }

    /// Appends an attempt, persisting it first when file-backed.
    pub fn record(&mut self, rec: AttemptRecord) -> Result<(), EvalError> {
        let next = self.next_index(&rec.problem_id);
        if rec.sample_index < next {
            let path = self
                .file
                .as_ref()
                .map(|(p, _)| p.clone())
                .unwrap_or_default();
            return Err(EvalError::Ledger {
                path,
                message: format!(
                    "sample index {} for {} is below {next}",
                    rec.sample_index, rec.problem_id
                ),
            });
        }
        if let Some((path, f)) = &mut self.file {
            let line = serde_json::to_string(&rec).expect("attempt serializes");
            writeln!(f, "{line}")
                .and_then(|_| f.flush())
                .map_err(io(path))?;
        }
        let path = self
            .file
            .as_ref()
            .map(|(p, _)| p.clone())
            .unwrap_or_default();
        self.push(rec)
            .map_err(|message| EvalError::Ledger { path, message })
    }

    /// In-memory copy restricted to the problems `keep` accepts.
    pub fn subset(&self, keep: impl Fn(&str) -> bool) -> AttemptLedger {
        AttemptLedger {
            problems: self
                .problems
                .iter()
                .filter(|(id, _)| keep(id))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
            attempts: self
                .attempts
                .iter()
                .filter(|(id, _)| keep(id))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
            file: None,
        }
    }

    pub fn problems(&self) -> &BTreeMap<String, ProblemKey> {
        &self.problems
    }

    pub fn attempts(&self, problem: &str) -> &[AttemptRecord] {
        self.attempts.get(problem).map_or(&[], Vec::as_slice)
    }

    pub fn total_attempts(&self) -> usize {
        self.attempts.values().map(Vec::len).sum()
    }

    pub fn next_index(&self, problem: &str) -> u32 {
        self.attempts(problem)
            .last()
            .map_or(0, |r| r.sample_index + 1)
    }

    pub fn attempts_in_run(&self, problem: &str, run_id: &str) -> usize {
        self.attempts(problem)
            .iter()
            .filter(|r| r.run_id == run_id)
            .count()
    }

    pub fn is_proved(&self, problem: &str) -> bool {
        self.attempts(problem).iter().any(|r| r.verdict.is_proved())
    }

    pub fn max_attempts(&self) -> usize {
        self.attempts.values().map(Vec::len).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkOptions {
    pub run_id: String,
    /// Samples per problem in this run.
    pub n: u32,
    /// Stop sampling a problem after its first verified proof.
    pub early_stop: bool,
    pub concurrency: usize,
    pub attempt_timeout_s: f64,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        BenchmarkOptions {
            run_id: "run0".into(),
            n: 64,
            early_stop: false,
            concurrency: 8,
            attempt_timeout_s: 600.0,
        }
    }
}

/// Samples up to `n` proofs per problem for run `run_id`, continuing a
/// partially recorded run. Problems run concurrently; each problem samples
/// sequentially, so its indices stay ordered.
pub async fn run_benchmark(
    suite: &[BenchmarkProblem],
    opts: &BenchmarkOptions,
    sampler: &dyn ProofSampler,
    verifier: &dyn ProofVerifier,
    ledger: &mut AttemptLedger,
) -> Result<(), EvalError> {
    ledger.add_problems(suite);
    let timeout = Duration::from_secs_f64(opts.attempt_timeout_s);
    let plans: Vec<(&BenchmarkProblem, u32, u32)> = suite
        .iter()
        .filter(|p| !(opts.early_stop && ledger.is_proved(&p.id)))
        .map(|p| {
            let done = ledger.attempts_in_run(&p.id, &opts.run_id) as u32;
            (p, ledger.next_index(&p.id), opts.n.saturating_sub(done))
        })
        .filter(|(_, _, left)| *left > 0)
        .collect();
    let (tx, mut rx) = tokio::sync::mpsc::unbounded_channel::<AttemptRecord>();
    let work = stream::iter(plans)
        .map(move |(p, start, left)| {
            let tx = tx.clone();
            async move {
                for i in start..start + left {
                    let res = run_attempt(
                        sampler,
                        verifier,
                        &p.id,
                        &p.statement,
                        Polarity::Original,
                        i,
                        timeout,
                    )
                    .await?;
                    let wall_time = res
                        .outcome
                        .as_ref()
                        .map_or(opts.attempt_timeout_s, |o| o.wall_time);
                    let proved = res.verdict.is_proved();
                    let _ = tx.send(AttemptRecord {
                        problem_id: p.id.clone(),
                        run_id: opts.run_id.clone(),
                        sample_index: i,
                        verdict: res.verdict,
                        wall_time,
                    });
                    if proved && opts.early_stop {
                        break;
                    }
                }
                Ok::<(), SearchError>(())
            }
        })
        .buffer_unordered(opts.concurrency.max(1))
        .collect::<Vec<_>>();
    let drain = async {
        let mut err = None;
        while let Some(rec) = rx.recv().await {
            if let Err(e) = ledger.record(rec) {
                err.get_or_insert(e);
            }
        }
        err
    };
    let (results, ledger_err) = tokio::join!(work, drain);
    if let Some(e) = ledger_err {
        return Err(e);
    }
    for r in results {
        r?;
    }
    Ok(())
}

/// How pass@k is computed from attempts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassEstimator {
    /// Solved within the first `k` recorded attempts.
    #[default]
    Empirical,
    /// `1 - C(n - c, k) / C(n, k)` over all `n` attempts with `c` successes.
    Unbiased,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassRate {
    pub k: u32,
    pub solved: f64,
    pub problems: usize,
    pub rate: f64,
    pub by_group: BTreeMap<String, f64>,
    /// Problems with fewer than `k` attempts and no success among them.
    pub short: Vec<String>,
}

impl PassRate {
    pub fn warning(&self) -> Option<String> {
        (!self.short.is_empty()).then(|| {
            format!(
                "k = {} exceeds the recorded attempts of {} unsolved problem(s); rate uses the available attempts",
                self.k,
                self.short.len()
            )
        })
    }
}

pub fn unbiased_pass_at_k(n: u32, c: u32, k: u32) -> f64 {
    if c == 0 {
        return 0.0;
    }
    if n - c < k {
        return 1.0;
    }
    // Product form avoids overflow: prod_{i = n-c+1}^{n} (1 - k / i).
    1.0 - (n - c + 1..=n).fold(1.0, |acc, i| acc * (1.0 - k as f64 / i as f64))
}

pub fn pass_at_k(ledger: &AttemptLedger, k: u32) -> Result<PassRate, EvalError> {
    pass_at_k_with(ledger, k, PassEstimator::Empirical)
}

pub fn pass_at_k_with(
    ledger: &AttemptLedger,
    k: u32,
    estimator: PassEstimator,
) -> Result<PassRate, EvalError> {
    if k == 0 {
        return Err(EvalError::InvalidK);
    }
    let mut solved = 0.0;
    let mut short = Vec::new();
    let mut groups: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (id, key) in &ledger.problems {
        let rows = ledger.attempts(id);
        let score = match estimator {
            PassEstimator::Empirical => {
                let hit = rows.iter().take(k as usize).any(|r| r.verdict.is_proved());
                if !hit && rows.len() < k as usize {
                    short.push(id.clone());
                }
                f64::from(u8::from(hit))
            }
            PassEstimator::Unbiased => {
                let n = rows.len() as u32;
                let c = rows.iter().filter(|r| r.verdict.is_proved()).count() as u32;
                if n < k && c == 0 {
                    short.push(id.clone());
                }
                if n < k {
                    f64::from(u8::from(c > 0))
                } else {
                    unbiased_pass_at_k(n, c, k)
                }
            }
        };
        solved += score;
        let g = groups.entry(key.to_string()).or_default();
        g.0 += score;
        g.1 += 1;
    }
    let problems = ledger.problems.len();
    let rate = if problems == 0 {
        0.0
    } else {
        solved / problems as f64
    };
    let pr = PassRate {
        k,
        solved,
        problems,
        rate,
        by_group: groups
            .into_iter()
            .map(|(g, (s, n))| (g, s / n as f64))
            .collect(),
        short,
    };
    Ok(pr)
}

/// Fraction of problems (over all ledgers) proved by any attempt of any ledger.
pub fn cumulative_pass(ledgers: &[&AttemptLedger]) -> f64 {
    cumulative_by_group(ledgers).0
}

fn cumulative_by_group(ledgers: &[&AttemptLedger]) -> (f64, BTreeMap<String, f64>) {
    let mut problems: BTreeMap<&str, &ProblemKey> = BTreeMap::new();
    let mut proved: BTreeSet<&str> = BTreeSet::new();
    for l in ledgers {
        for (id, key) in &l.problems {
            problems.insert(id, key);
            if l.is_proved(id) {
                proved.insert(id);
            }
        }
    }
    let mut groups: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (id, key) in &problems {
        let g = groups.entry(key.to_string()).or_default();
        g.1 += 1;
        if proved.contains(id) {
            g.0 += 1;
        }
    }
    let overall = if problems.is_empty() {
        0.0
    } else {
        proved.len() as f64 / problems.len() as f64
    };
    (
        overall,
        groups
            .into_iter()
            .map(|(g, (s, n))| (g, s as f64 / n as f64))
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub columns: Vec<String>,
    pub rows: Vec<(String, BTreeMap<String, f64>)>,
}

fn percent(rate: f64) -> String {
    format!("{:.1}%", rate * 100.0)
}

impl Report {
    pub fn to_text(&self) -> String {
        let mut header = vec!["configuration".to_string()];
        header.extend(self.columns.iter().cloned());
        let mut table: Vec<Vec<String>> = vec![header];
        for (name, values) in &self.rows {
            let mut row = vec![name.clone()];
            row.extend(
                self.columns
                    .iter()
                    .map(|c| values.get(c).map_or("-".into(), |v| percent(*v))),
            );
            table.push(row);
        }
        let widths: Vec<usize> = (0..table[0].len())
            .map(|i| {
                table
                    .iter()
                    .map(|r| r[i].chars().count())
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        for (n, row) in table.iter().enumerate() {
            let cells: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let pad = widths[i] - c.chars().count();
                    if i == 0 {
                        format!("{c}{}", " ".repeat(pad))
                    } else {
                        format!("{}{c}", " ".repeat(pad))
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
            if n == 0 {
                let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
                let _ = writeln!(out, "{}", rule.join("  "));
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["configuration".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header).expect("csv to memory");
        for (name, values) in &self.rows {
            let mut row = vec![name.clone()];
            row.extend(
                self.columns
                    .iter()
                    .map(|c| values.get(c).map_or(String::new(), |v| format!("{v:.4}"))),
            );
            w.write_record(&row).expect("csv to memory");
        }
        String::from_utf8(w.into_inner().expect("csv flush")).expect("csv is utf-8")
    }
}

/// One row per (ledger, k), plus a `cumulative` row when there is more than
/// one ledger. Columns are `suite/split` groups.
pub fn report(ledgers: &[(String, &AttemptLedger)], ks: &[u32]) -> Result<Report, EvalError> {
    let mut columns = BTreeSet::new();
    let mut rows = Vec::new();
    for (name, ledger) in ledgers {
        for key in ledger.problems.values() {
            columns.insert(key.to_string());
        }
        for &k in ks {
            let pr = pass_at_k(ledger, k)?;
            rows.push((format!("{name} pass@{k}"), pr.by_group));
        }
    }
    if ledgers.len() > 1 {
        let all: Vec<&AttemptLedger> = ledgers.iter().map(|(_, l)| *l).collect();
        rows.push(("cumulative".to_string(), cumulative_by_group(&all).1));
    }
    Ok(Report {
        columns: columns.into_iter().collect(),
        rows,
    })
}
