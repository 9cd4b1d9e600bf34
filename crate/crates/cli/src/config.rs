//! Declarative run configuration. Paths inside the file are relative to
//! the file; paths given as flags are relative to the working directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use synthproof::gateway::RetryPolicy;
use synthproof::pipeline::PipelineConfig;
use synthproof::verifier::VerifierConfig;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub kind: BackendKind,
    pub mock_script: Option<PathBuf>,
    pub endpoint: Option<String>,
    /// Environment variable holding the bearer token.
    pub auth_env: String,
    pub request_timeout_s: f64,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
}

impl Default for BackendSection {
    fn default() -> Self {
        BackendSection {
            kind: BackendKind::Mock,
            mock_script: None,
            endpoint: None,
            auth_env: "SYNTHPROOF_API_TOKEN".into(),
            request_timeout_s: 300.0,
            max_in_flight: 16,
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifierKind {
    #[default]
    Process,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct VerifierSection {
    pub kind: VerifierKind,
    /// JSON-lines rules for the mock checker.
    pub mock_rules: Option<PathBuf>,
    #[serde(flatten)]
    pub pool: VerifierConfig,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockKind {
    #[default]
    System,
    /// Every timestamp reads `frozen_at`; makes manifests reproducible.
    Frozen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub clock: ClockKind,
    pub frozen_at: u64,
    pub store: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub log_file: Option<PathBuf>,
    /// JSON object: iteration -> {benchmark -> pass rate}, for the stopping rule.
    pub scores: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub suite: Option<PathBuf>,
    pub ledger: Option<PathBuf>,
    pub run_id: String,
    pub samples: u32,
    pub k: Vec<u32>,
    pub early_stop: bool,
    pub concurrency: usize,
    /// Overrides the proving temperature; 0 means greedy.
    pub temperature: Option<f64>,
    /// Model route; defaults to the last prover route.
    pub route: Option<String>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            suite: None,
            ledger: None,
            run_id: "run0".into(),
            samples: 64,
            k: vec![1, 64],
            early_stop: false,
            concurrency: 8,
            temperature: None,
            route: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub pipeline: PipelineConfig,
    pub backend: BackendSection,
    pub verifier: VerifierSection,
    pub run: RunSection,
    pub eval: EvalSection,
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl CliConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("reading config {}: {e}", path.display()))?;
        let mut cfg: CliConfig = toml::from_str(&text)
            .map_err(|e| anyhow::anyhow!("parsing config {}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.backend.mock_script,
            &mut cfg.verifier.mock_rules,
            &mut cfg.verifier.pool.cache_path,
            &mut cfg.verifier.pool.working_dir,
            &mut cfg.run.store,
            &mut cfg.run.corpus,
            &mut cfg.run.log_file,
            &mut cfg.run.scores,
            &mut cfg.eval.suite,
            &mut cfg.eval.ledger,
        ] {
            rebase(base, p);
        }
        Ok(cfg)
    }

    /// The part of the configuration that determines a run's outputs, as
    /// recorded in manifests. File references keep only their file names so
    /// the snapshot does not depend on where the run happens.
    pub fn snapshot(&self) -> String {
        #[derive(Serialize)]
        struct Snapshot<'a> {
            backend: BackendKind,
            mock_script: Option<String>,
            verifier: VerifierKind,
            mock_rules: Option<String>,
            toolchain_tag: &'a str,
            mathlib_commit: &'a str,
            verifier_timeout_s: f64,
            pipeline: &'a PipelineConfig,
        }
        let name = |p: &Option<PathBuf>| {
            p.as_ref()
                .and_then(|p| p.file_name())
                .map(|n| n.to_string_lossy().into_owned())
        };
        let snap = Snapshot {
            backend: self.backend.kind,
            mock_script: name(&self.backend.mock_script),
            verifier: self.verifier.kind,
            mock_rules: name(&self.verifier.mock_rules),
            toolchain_tag: &self.verifier.pool.toolchain_tag,
            mathlib_commit: &self.verifier.pool.mathlib_commit,
            verifier_timeout_s: self.verifier.pool.timeout_s,
            pipeline: &self.pipeline,
        };
        toml::to_string(&snap).expect("config snapshot serializes")
    }
}

pub fn load_scores(path: &Path) -> anyhow::Result<BTreeMap<u32, BTreeMap<String, f64>>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| anyhow::anyhow!("reading scores {}: {e}", path.display()))?;
    serde_json::from_str(&text)
        .map_err(|e| anyhow::anyhow!("parsing scores {}: {e}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_rebased_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "[backend]\nmock_script = \"script.jsonl\"\n[pipeline.search]\nk = 8\n[verifier]\nkind = \"mock\"\npool_size = 2\n[run]\nclock = \"frozen\"\n",
        )
        .unwrap();
        let cfg = CliConfig::load(&path).unwrap();
        assert_eq!(cfg.pipeline.search.k, 8);
        assert_eq!(cfg.pipeline.false_test_budget, 16);
        assert_eq!(cfg.verifier.pool.pool_size, 2);
        assert_eq!(cfg.verifier.kind, VerifierKind::Mock);
        assert_eq!(
            cfg.backend.mock_script.as_deref(),
            Some(dir.path().join("script.jsonl").as_path())
        );
        let snap = cfg.snapshot();
        assert!(snap.contains("mock_script = \"script.jsonl\""), "{snap}");
        assert!(!snap.contains(&dir.path().display().to_string()));
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "[run]\nclok = \"frozen\"\n").unwrap();
        assert!(CliConfig::load(&path).is_err());
    }
}
