//! Record, pair and manifest storage.
//!
//! A store is a directory of three line-delimited JSON files, each opening
//! with a schema header line:
//!
//! * `records.jsonl`: record snapshots, last snapshot per id wins;
//! * `pairs.jsonl`: theorem–proof pairs, first pair per content hash wins;
//! * `manifests.jsonl`: one manifest per finished iteration.
//!
//! A `.lock` file held with an exclusive advisory lock keeps a second writer
//! out. A final line torn by an interrupted write is dropped at load.

pub mod export;
pub mod manifest;

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use export::{
    export_slice, export_training_file, import_training_file, ExportLine, SliceSpec, SliceSummary,
};
pub use manifest::{should_stop, stage_counts, IterationManifest, StopRule};

use crate::record::{StatementRecord, StatementState, TheoremProofPair};
use crate::statement::{validate_corpus, InformalProblem, ProblemError};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const PAIRS_FILE: &str = "pairs.jsonl";
pub const MANIFESTS_FILE: &str = "manifests.jsonl";
pub const LOCK_FILE: &str = ".lock";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("storage failure at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: expected schema {expected} v{version}, found {found}")]
    SchemaMismatch {
        path: PathBuf,
        expected: String,
        version: u32,
        found: String,
    },
    #[error("store {0} is locked by another process")]
    Locked(PathBuf),
    #[error("injected crash after {0} store writes")]
    InjectedCrash(u64),
    #[error("no pairs to export")]
    EmptyDataset,
    #[error(transparent)]
    Corpus(#[from] ProblemError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StorageError + '_ {
    move |source| StorageError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct SchemaHeader {
    schema: String,
    version: u32,
}

fn schema_name(file: &str) -> String {
    format!("synthproof.{}", file.trim_end_matches(".jsonl"))
}

/// Reads a header-prefixed JSONL file. A missing file is empty.
fn load_lines<T: DeserializeOwned>(path: &Path, file: &str) -> Result<Vec<T>, StorageError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let reader = BufReader::new(File::open(path).map_err(io_err(path))?);
    let lines: Vec<String> = reader
        .lines()
        .collect::<Result<_, _>>()
        .map_err(io_err(path))?;
    let Some(first) = lines.first() else {
        return Ok(Vec::new());
    };
    let expected = schema_name(file);
    match serde_json::from_str::<SchemaHeader>(first) {
        Ok(h) if h.schema == expected && h.version == SCHEMA_VERSION => {}
        _ => {
            return Err(StorageError::SchemaMismatch {
                path: path.to_path_buf(),
                expected,
                version: SCHEMA_VERSION,
                found: first.chars().take(120).collect(),
            })
        }
    }
    let mut out = Vec::with_capacity(lines.len());
    let last = lines.len() - 1;
    for (i, line) in lines.iter().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(v) => out.push(v),
            Err(_) if i == last && !line.ends_with('}') => {
                tracing::warn!(path = %path.display(), line = i + 1, "dropping torn final line");
            }
            Err(e) => {
                return Err(StorageError::Corrupt {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

fn open_append(path: &Path, file: &str) -> Result<File, StorageError> {
    let fresh = !path.exists() || std::fs::metadata(path).map_err(io_err(path))?.len() == 0;
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    if fresh {
        write_header(&mut f, file).map_err(io_err(path))?;
    }
    Ok(f)
}

fn write_header(w: &mut impl Write, file: &str) -> std::io::Result<()> {
    let header = SchemaHeader {
        schema: schema_name(file),
        version: SCHEMA_VERSION,
    };
    writeln!(
        w,
        "{}",
        serde_json::to_string(&header).expect("header serializes")
    )
}

/// Reads a problem corpus: one JSON object per line, blank lines skipped.
pub fn load_corpus(path: &Path) -> Result<Vec<InformalProblem>, StorageError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_corpus(&text).map_err(|(line, message)| StorageError::Corrupt {
        path: path.to_path_buf(),
        line,
        message,
    })
}

pub fn parse_corpus(text: &str) -> Result<Vec<InformalProblem>, (usize, String)> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| (i + 1, e.to_string()))?);
    }
    validate_corpus(&out).map_err(|e| (0, e.to_string()))?;
    Ok(out)
}

pub struct DatasetStore {
    dir: PathBuf,
    records: BTreeMap<String, StatementRecord>,
    pairs: BTreeMap<String, TheoremProofPair>,
    manifests: Vec<IterationManifest>,
    records_log: BufWriter<File>,
    pairs_log: BufWriter<File>,
    manifests_log: BufWriter<File>,
    _lock: File,
    writes: u64,
    fault_after: Option<u64>,
}

impl DatasetStore {
    /// Opens or creates the store in `dir`, taking its writer lock.
    pub fn open(dir: &Path) -> Result<Self, StorageError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let lock_path = dir.join(LOCK_FILE);
        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&lock_path)
            .map_err(io_err(&lock_path))?;
        match lock.try_lock() {
            Ok(()) => {}
            Err(std::fs::TryLockError::WouldBlock) => {
                return Err(StorageError::Locked(dir.to_path_buf()))
            }
            Err(std::fs::TryLockError::Error(e)) => return Err(io_err(&lock_path)(e)),
        }

        let rp = dir.join(RECORDS_FILE);
        let pp = dir.join(PAIRS_FILE);
        let mp = dir.join(MANIFESTS_FILE);
        let mut records = BTreeMap::new();
        for rec in load_lines::<StatementRecord>(&rp, RECORDS_FILE)? {
            records.insert(rec.id.clone(), rec);
        }
        let mut pairs = BTreeMap::new();
        for pair in load_lines::<TheoremProofPair>(&pp, PAIRS_FILE)? {
            pairs.entry(pair.content_hash.clone()).or_insert(pair);
        }
        let manifests = load_lines::<IterationManifest>(&mp, MANIFESTS_FILE)?;
        Ok(DatasetStore {
            records_log: BufWriter::new(open_append(&rp, RECORDS_FILE)?),
            pairs_log: BufWriter::new(open_append(&pp, PAIRS_FILE)?),
            manifests_log: BufWriter::new(open_append(&mp, MANIFESTS_FILE)?),
            dir: dir.to_path_buf(),
            records,
            pairs,
            manifests,
            _lock: lock,
            writes: 0,
            fault_after: None,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Fails every write after the first `n`, simulating a crash.
    pub fn set_fault_after(&mut self, n: Option<u64>) {
        self.fault_after = n;
    }

    fn append<T: Serialize>(&mut self, which: &str, value: &T) -> Result<(), StorageError> {
        if let Some(n) = self.fault_after {
            if self.writes >= n {
                return Err(StorageError::InjectedCrash(n));
            }
        }
        let line = serde_json::to_string(value).expect("store values serialize");
        let path = self.dir.join(which);
        let log = match which {
            RECORDS_FILE => &mut self.records_log,
            PAIRS_FILE => &mut self.pairs_log,
            _ => &mut self.manifests_log,
        };
        writeln!(log, "{line}")
            .and_then(|_| log.flush())
            .map_err(io_err(&path))?;
        self.writes += 1;
        Ok(())
    }

    pub fn put_record(&mut self, rec: &StatementRecord) -> Result<(), StorageError> {
        self.append(RECORDS_FILE, rec)?;
        self.records.insert(rec.id.clone(), rec.clone());
        Ok(())
    }

    pub fn record(&self, id: &str) -> Option<&StatementRecord> {
        self.records.get(id)
    }

    /// All records, ordered by id.
    pub fn records(&self) -> impl Iterator<Item = &StatementRecord> {
        self.records.values()
    }

    pub fn records_in(&self, iteration: u32) -> impl Iterator<Item = &StatementRecord> {
        self.records
            .values()
            .filter(move |r| r.iteration == iteration)
    }

    pub fn count_in_state(&self, state: StatementState) -> usize {
        self.records.values().filter(|r| r.state == state).count()
    }

    /// Inserts iff the content hash is new. Returns whether it was inserted.
    pub fn upsert_pair(&mut self, pair: &TheoremProofPair) -> Result<bool, StorageError> {
        if self.pairs.contains_key(&pair.content_hash) {
            return Ok(false);
        }
        self.append(PAIRS_FILE, pair)?;
        self.pairs.insert(pair.content_hash.clone(), pair.clone());
        Ok(true)
    }

    /// Pairs ordered by content hash.
    pub fn pairs(&self) -> impl Iterator<Item = &TheoremProofPair> {
        self.pairs.values()
    }

    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }

    pub fn contains_hash(&self, hash: &str) -> bool {
        self.pairs.contains_key(hash)
    }

    pub fn append_manifest(&mut self, m: &IterationManifest) -> Result<(), StorageError> {
        self.append(MANIFESTS_FILE, m)?;
        self.manifests.push(m.clone());
        Ok(())
    }

    pub fn manifests(&self) -> &[IterationManifest] {
        &self.manifests
    }

    /// Latest manifest for `iteration`.
    pub fn manifest(&self, iteration: u32) -> Option<&IterationManifest> {
        self.manifests
            .iter()
            .rev()
            .find(|m| m.iteration == iteration)
    }

    /// Rewrites the record log with one snapshot per record.
    pub fn compact(&mut self) -> Result<(), StorageError> {
        let path = self.dir.join(RECORDS_FILE);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(io_err(&self.dir))?;
        {
            let mut w = BufWriter::new(tmp.as_file_mut());
            write_header(&mut w, RECORDS_FILE).map_err(io_err(&path))?;
            for rec in self.records.values() {
                writeln!(
                    w,
                    "{}",
                    serde_json::to_string(rec).expect("record serializes")
                )
                .map_err(io_err(&path))?;
            }
            w.flush().map_err(io_err(&path))?;
        }
        tmp.as_file().sync_all().map_err(io_err(&path))?;
        tmp.persist(&path).map_err(|e| io_err(&path)(e.error))?;
        let f = OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        self.records_log = BufWriter::new(f);
        Ok(())
    }
}
