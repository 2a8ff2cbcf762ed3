//! Declarative run configuration, read from one TOML file.
//!
//! Relative paths resolve against the directory holding the config file. The
//! parsed config is written verbatim into the corpus manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use triagesim_core::backend::RemoteConfig;
use triagesim_core::dialogue::EngineConfig;
use triagesim_core::persona::{Country, NurseOverrides, PatientOverrides};
use triagesim_core::speech::{GapPolicy, MixConfig};
use triagesim_core::{Scale, Source};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Corpus directory.
    pub output_dir: PathBuf,
    #[serde(default = "one")]
    pub conversations_per_case: usize,
    #[serde(default)]
    pub inputs: Inputs,
    #[serde(default)]
    pub policies: PolicyPaths,
    #[serde(default)]
    pub personas: PersonaOverrides,
    #[serde(default)]
    pub backends: Backends,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub speech: SpeechConfig,
    #[serde(default)]
    pub classify: ClassifyConfig,
    #[serde(default)]
    pub stages: StageToggles,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseFile {
    pub path: PathBuf,
    pub source: Source,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    #[serde(default)]
    pub cases: Vec<CaseFile>,
    /// Expert red-flag references, one JSON object per line.
    #[serde(default)]
    pub expert_annotations: Option<PathBuf>,
}

/// Policy overrides; the bundled ATS/ESI policies are used when absent.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyPaths {
    #[serde(default)]
    pub ats: Option<PathBuf>,
    #[serde(default)]
    pub esi: Option<PathBuf>,
}

impl PolicyPaths {
    pub fn get(&self, scale: Scale) -> Option<&PathBuf> {
        match scale {
            Scale::Ats => self.ats.as_ref(),
            Scale::Esi => self.esi.as_ref(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonaOverrides {
    #[serde(default)]
    pub nurse: NurseOverrides,
    #[serde(default)]
    pub patient: PatientOverrides,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// Persona-driven canned scripts; fully offline.
    #[default]
    Simulated,
    Remote,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Backends {
    #[serde(default)]
    pub kind: BackendKind,
    /// Roster the dialogue generator is drawn from per conversation.
    #[serde(default)]
    pub generators: Vec<RemoteConfig>,
    /// Break annotator; rule-based annotation when absent.
    #[serde(default)]
    pub annotator: Option<RemoteConfig>,
    #[serde(default)]
    pub classifiers: Vec<RemoteConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeechConfig {
    /// Model bridge base URL, or `mock` for the in-process mock bridge.
    #[serde(default = "mock_url")]
    pub bridge_url: String,
    #[serde(default)]
    pub voices: Option<PathBuf>,
    #[serde(default)]
    pub noise: Option<PathBuf>,
    /// Nurse personas carry no accent; nurse voices are drawn from this one.
    #[serde(default = "default_nurse_country")]
    pub nurse_country: Country,
    #[serde(default)]
    pub gaps: GapPolicy,
    #[serde(default)]
    pub mix: MixConfig,
    #[serde(default)]
    pub requests_per_minute: Option<u32>,
    #[serde(default = "default_bridge_timeout")]
    pub timeout_s: u64,
}

fn mock_url() -> String {
    "mock".into()
}

fn default_nurse_country() -> Country {
    Country::Australian
}

fn default_bridge_timeout() -> u64 {
    300
}

impl Default for SpeechConfig {
    fn default() -> Self {
        Self {
            bridge_url: mock_url(),
            voices: None,
            noise: None,
            nurse_country: default_nurse_country(),
            gaps: GapPolicy::default(),
            mix: MixConfig::default(),
            requests_per_minute: None,
            timeout_s: default_bridge_timeout(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    /// Generated transcript text.
    Syn,
    /// ASR transcripts of the rendered audio.
    Asr,
    /// The mixed session audio itself.
    Audio,
}

impl Modality {
    pub fn label(self) -> &'static str {
        match self {
            Modality::Syn => "Syn",
            Modality::Asr => "ASR",
            Modality::Audio => "Audio",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyConfig {
    #[serde(default = "default_modalities")]
    pub modalities: Vec<Modality>,
}

fn default_modalities() -> Vec<Modality> {
    vec![Modality::Syn, Modality::Asr]
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            modalities: default_modalities(),
        }
    }
}

/// Which stages `run` executes. Individual subcommands ignore these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageToggles {
    #[serde(default = "yes")]
    pub synthesize: bool,
    #[serde(default = "yes")]
    pub mix: bool,
    #[serde(default = "yes")]
    pub evaluate: bool,
    #[serde(default = "yes")]
    pub classify: bool,
    #[serde(default = "yes")]
    pub stats: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        Self {
            synthesize: true,
            mix: true,
            evaluate: true,
            classify: true,
            stats: true,
        }
    }
}

/// A parsed config plus the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let config = Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { config, base_dir })
    }

    pub fn parse(text: &str) -> Result<RunConfig, String> {
        let config: RunConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        config.validate()?;
        Ok(config)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output_dir)
    }
}

impl RunConfig {
    fn validate(&self) -> Result<(), String> {
        if self.conversations_per_case == 0 {
            return Err("conversations_per_case must be at least 1".into());
        }
        if self.backends.kind == BackendKind::Remote && self.backends.generators.is_empty() {
            return Err("backends.kind = \"remote\" needs at least one entry in backends.generators".into());
        }
        if self.engine.max_turns == 0 {
            return Err("engine.max_turns must be at least 1".into());
        }
        let m = &self.speech.mix;
        if m.event_gain_min_db > m.event_gain_max_db || m.seconds_per_event <= 0.0 {
            return Err("speech.mix: invalid event gain range or seconds_per_event".into());
        }
        if self.speech.gaps.base_s < 0.0 || self.speech.gaps.jitter_s < 0.0 {
            return Err("speech.gaps must be non-negative".into());
        }
        Ok(())
    }
}
