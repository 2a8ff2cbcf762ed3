//! Corpus manifest and artifact bookkeeping.
//!
//! Every artifact is written through [`Corpus::write`], which records its
//! path relative to the corpus root and its SHA-256. `verify` recomputes the
//! checksums.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use triagesim_core::persona::{NursePersona, PatientPersona};
use triagesim_core::Scale;

use crate::config::RunConfig;
use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Personas,
    Generate,
    Annotate,
    Synthesize,
    Mix,
    Evaluate,
    Classify,
    Stats,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Ingest,
        Stage::Personas,
        Stage::Generate,
        Stage::Annotate,
        Stage::Synthesize,
        Stage::Mix,
        Stage::Evaluate,
        Stage::Classify,
        Stage::Stats,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Personas => "personas",
            Stage::Generate => "generate",
            Stage::Annotate => "annotate",
            Stage::Synthesize => "synthesize",
            Stage::Mix => "mix",
            Stage::Evaluate => "evaluate",
            Stage::Classify => "classify",
            Stage::Stats => "stats",
        }
    }

    /// Stages that must have run before this one.
    pub fn requires(self) -> &'static [Stage] {
        match self {
            Stage::Ingest => &[],
            Stage::Personas => &[Stage::Ingest],
            Stage::Generate => &[Stage::Personas],
            Stage::Annotate => &[Stage::Generate],
            Stage::Synthesize => &[Stage::Annotate],
            Stage::Mix => &[Stage::Synthesize],
            Stage::Evaluate | Stage::Classify | Stage::Stats => &[Stage::Generate],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    /// Relative to the corpus root, `/`-separated.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub conversation_id: String,
    pub case_id: String,
    pub scale: Scale,
    pub nurse_persona: NursePersona,
    pub patient_persona: PatientPersona,
    #[serde(default)]
    pub model_id: Option<String>,
    /// Keyed by artifact kind (`transcript`, `annotated`, `session`, ...).
    #[serde(default)]
    pub artifacts: BTreeMap<String, ArtifactRef>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub processed: usize,
    /// `conversation_id: error` for each failure in the last run.
    #[serde(default)]
    pub failures: Vec<String>,
}

impl StageRecord {
    pub fn completed(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub format_version: u32,
    pub config: RunConfig,
    #[serde(default)]
    pub stages: BTreeMap<Stage, StageRecord>,
    /// Corpus-level artifacts (cases, personas, reports).
    #[serde(default)]
    pub shared: BTreeMap<String, ArtifactRef>,
    #[serde(default)]
    pub entries: BTreeMap<String, ManifestEntry>,
}

impl CorpusManifest {
    pub fn new(config: RunConfig) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            config,
            stages: BTreeMap::new(),
            shared: BTreeMap::new(),
            entries: BTreeMap::new(),
        }
    }

    pub fn stage_ran(&self, stage: Stage) -> bool {
        self.stages.contains_key(&stage)
    }

    pub fn stage_completed(&self, stage: Stage) -> bool {
        self.stages.get(&stage).is_some_and(StageRecord::completed)
    }

    pub fn check_dependencies(&self, stage: Stage) -> Result<(), CliError> {
        match stage.requires().iter().find(|s| !self.stage_ran(**s)) {
            Some(missing) => Err(CliError::Dependency {
                stage: stage.to_string(),
                missing: missing.to_string(),
            }),
            None => Ok(()),
        }
    }

    /// Every referenced artifact, shared ones first.
    pub fn artifacts(&self) -> impl Iterator<Item = &ArtifactRef> {
        self.shared
            .values()
            .chain(self.entries.values().flat_map(|e| e.artifacts.values()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// A problem found by [`Corpus::verify`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Mismatch {
    pub path: String,
    pub problem: String,
}

/// The corpus directory.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub root: PathBuf,
}

impl Corpus {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn conversation_dir(case_id: &str, conversation_id: &str) -> String {
        format!("{case_id}/{conversation_id}")
    }

    pub fn write(&self, rel: &str, bytes: &[u8]) -> Result<ArtifactRef, CliError> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        let tmp = path.with_extension("partial");
        std::fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| CliError::io(&path, e))?;
        Ok(ArtifactRef {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
        })
    }

    pub fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<ArtifactRef, CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Artifact {
            path: self.path(rel),
            message: e.to_string(),
        })?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    pub fn read(&self, rel: &str) -> Result<Vec<u8>, CliError> {
        let path = self.path(rel);
        std::fs::read(&path).map_err(|e| CliError::io(path, e))
    }

    pub fn read_json<T: DeserializeOwned>(&self, rel: &str) -> Result<T, CliError> {
        let bytes = self.read(rel)?;
        serde_json::from_slice(&bytes).map_err(|e| CliError::Artifact {
            path: self.path(rel),
            message: e.to_string(),
        })
    }

    /// Reads an artifact, failing when it no longer matches its checksum.
    pub fn read_artifact(&self, artifact: &ArtifactRef) -> Result<Vec<u8>, CliError> {
        let bytes = self.read(&artifact.path)?;
        if sha256_hex(&bytes) != artifact.sha256 {
            return Err(CliError::Artifact {
                path: self.path(&artifact.path),
                message: "contents changed since it was recorded; re-run the stage that wrote it with --force".into(),
            });
        }
        Ok(bytes)
    }

    pub fn read_artifact_json<T: DeserializeOwned>(&self, artifact: &ArtifactRef) -> Result<T, CliError> {
        let bytes = self.read_artifact(artifact)?;
        serde_json::from_slice(&bytes).map_err(|e| CliError::Artifact {
            path: self.path(&artifact.path),
            message: e.to_string(),
        })
    }

    /// True when the file exists and still matches its recorded checksum.
    pub fn is_intact(&self, artifact: &ArtifactRef) -> bool {
        std::fs::read(self.path(&artifact.path)).is_ok_and(|b| sha256_hex(&b) == artifact.sha256)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.path(MANIFEST_FILE)
    }

    pub fn load_manifest(&self) -> Result<Option<CorpusManifest>, CliError> {
        let path = self.manifest_path();
        if !path.exists() {
            return Ok(None);
        }
        self.read_json(MANIFEST_FILE).map(Some)
    }

    pub fn save_manifest(&self, manifest: &CorpusManifest) -> Result<(), CliError> {
        self.write_json(MANIFEST_FILE, manifest).map(|_| ())
    }

    pub fn verify(&self, manifest: &CorpusManifest) -> Vec<Mismatch> {
        let mut out = Vec::new();
        for a in manifest.artifacts() {
            match std::fs::read(self.path(&a.path)) {
                Ok(bytes) => {
                    let actual = sha256_hex(&bytes);
                    if actual != a.sha256 {
                        out.push(Mismatch {
                            path: a.path.clone(),
                            problem: format!("checksum {actual} does not match recorded {}", a.sha256),
                        });
                    }
                }
                Err(e) => out.push(Mismatch {
                    path: a.path.clone(),
                    problem: e.to_string(),
                }),
            }
        }
        out
    }
}

pub fn relative_display(root: &Path, path: &Path) -> String {
    path.strip_prefix(root).unwrap_or(path).display().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn verify_detects_mutation() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = Corpus::new(dir.path());
        let config = crate::config::LoadedConfig::parse("seed = 1\noutput_dir = \".\"\n").unwrap();
        let mut m = CorpusManifest::new(config);
        let a = corpus.write("x/a.txt", b"hello").unwrap();
        assert!(corpus.is_intact(&a));
        m.shared.insert("a".into(), a);
        assert!(corpus.verify(&m).is_empty());
        std::fs::write(corpus.path("x/a.txt"), b"hellO").unwrap();
        assert_eq!(corpus.verify(&m).len(), 1);
        std::fs::remove_file(corpus.path("x/a.txt")).unwrap();
        assert_eq!(corpus.verify(&m).len(), 1);
    }

    #[test]
    fn dependencies_follow_stage_order() {
        let config = crate::config::LoadedConfig::parse("seed = 1\noutput_dir = \".\"\n").unwrap();
        let mut m = CorpusManifest::new(config);
        assert!(m.check_dependencies(Stage::Ingest).is_ok());
        let err = m.check_dependencies(Stage::Synthesize).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        m.stages.insert(Stage::Annotate, StageRecord::default());
        assert!(m.check_dependencies(Stage::Synthesize).is_ok());
    }
}
