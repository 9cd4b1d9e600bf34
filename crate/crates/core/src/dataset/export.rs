//! Fine-tuning exports.

use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{io_err, DatasetStore, StorageError};
use crate::gateway::prompts::{render_proof_prompt, ProofPromptStyle, CODE_FENCE};
use crate::record::{Polarity, QualityCategory, TheoremProofPair};
use crate::statement::parse_statement;
use crate::verifier::strip_prefix;

/// One training example; `prompt` followed by `response` reproduces the
/// proof completion format, with the closing fence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportLine {
    pub prompt: String,
    pub response: String,
    pub polarity: Polarity,
    pub iteration: u32,
    pub content_hash: String,
}

impl ExportLine {
    pub fn from_pair(pair: &TheoremProofPair) -> Self {
        ExportLine {
            prompt: render_proof_prompt(&pair.statement, ProofPromptStyle::PrefixedStatement),
            response: format!("{}\n{CODE_FENCE}", pair.proof_body),
            polarity: pair.polarity,
            iteration: pair.iteration,
            content_hash: pair.content_hash.clone(),
        }
    }

    /// Rebuilds the pair. Category and source record are not exported.
    pub fn to_pair(&self) -> Result<TheoremProofPair, String> {
        let decl = strip_prefix(&self.prompt).unwrap_or(&self.prompt);
        let decl = decl
            .strip_suffix(" := by\n")
            .ok_or_else(|| "prompt does not end with ` := by`".to_string())?;
        let stmt = parse_statement(decl).map_err(|e| e.to_string())?;
        let body = self
            .response
            .strip_suffix(CODE_FENCE)
            .and_then(|r| r.strip_suffix('\n'))
            .ok_or_else(|| "response does not end with a closing fence".to_string())?;
        let pair = TheoremProofPair::new(stmt, body.to_string(), self.polarity, self.iteration);
        if pair.content_hash != self.content_hash {
            return Err(format!("content hash mismatch for {}", self.content_hash));
        }
        Ok(pair)
    }
}

fn write_lines<'a>(
    path: &Path,
    pairs: impl Iterator<Item = &'a TheoremProofPair>,
) -> Result<usize, StorageError> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut n = 0;
    for pair in pairs {
        let line =
            serde_json::to_string(&ExportLine::from_pair(pair)).expect("export line serializes");
        writeln!(w, "{line}").map_err(io_err(path))?;
        n += 1;
    }
    w.flush().map_err(io_err(path))?;
    Ok(n)
}

/// Writes every pair from iterations up to `iteration`, ordered by content
/// hash. An empty export still writes an (empty) file and reports
/// [`StorageError::EmptyDataset`].
pub fn export_training_file(
    store: &DatasetStore,
    iteration: u32,
    path: &Path,
) -> Result<usize, StorageError> {
    let n = write_lines(path, store.pairs().filter(|p| p.iteration <= iteration))?;
    if n == 0 {
        tracing::warn!(path = %path.display(), iteration, "training export is empty");
        return Err(StorageError::EmptyDataset);
    }
    Ok(n)
}

pub fn import_training_file(path: &Path) -> Result<Vec<TheoremProofPair>, StorageError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let corrupt = |message: String| StorageError::Corrupt {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let line: ExportLine = serde_json::from_str(l).map_err(|e| corrupt(e.to_string()))?;
            line.to_pair().map_err(corrupt)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceSpec {
    pub size: usize,
    pub seed: u64,
    pub max_iteration: u32,
    /// Empty means every category, including unscored pairs.
    #[serde(default)]
    pub categories: Vec<QualityCategory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceSummary {
    pub seed: u64,
    pub requested: usize,
    pub available: usize,
    pub written: usize,
}

/// Uniform seeded sample of the eligible pairs, written in hash order.
pub fn export_slice(
    store: &DatasetStore,
    spec: &SliceSpec,
    path: &Path,
) -> Result<SliceSummary, StorageError> {
    let eligible: Vec<&TheoremProofPair> = store
        .pairs()
        .filter(|p| p.iteration <= spec.max_iteration)
        .filter(|p| {
            spec.categories.is_empty() || p.category.is_some_and(|c| spec.categories.contains(&c))
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut chosen: Vec<&TheoremProofPair> = eligible
        .choose_multiple(&mut rng, spec.size)
        .copied()
        .collect();
    chosen.sort_by(|a, b| a.content_hash.cmp(&b.content_hash));
    let written = write_lines(path, chosen.into_iter())?;
    Ok(SliceSummary {
        seed: spec.seed,
        requested: spec.size,
        available: eligible.len(),
        written,
    })
}
