use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use tracing::warn;

use super::wave::{Waveform, PIPELINE_SAMPLE_RATE};
use super::SpeechError;
use crate::persona::{Country, Gender};

/// One line of `voices.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoiceRef {
    pub voice_id: String,
    pub country_of_origin: Country,
    pub gender: Gender,
    /// Relative to the manifest's directory.
    pub clip_path: PathBuf,
    pub transcript: String,
}

/// Loaded voice bank: manifest entries plus their reference clips at the
/// pipeline rate.
#[derive(Debug, Clone, Default)]
pub struct VoiceBank {
    pub voices: Vec<VoiceRef>,
    pub clips: BTreeMap<String, Waveform>,
}

impl VoiceBank {
    pub fn load(manifest: &Path) -> Result<Self, SpeechError> {
        let text = std::fs::read_to_string(manifest).map_err(|e| SpeechError::Io {
            path: manifest.to_path_buf(),
            source: e,
        })?;
        let base = manifest.parent().unwrap_or(Path::new("."));
        let mut bank = VoiceBank::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let voice: VoiceRef = serde_json::from_str(line)
                .map_err(|e| SpeechError::Manifest(format!("{}:{}: {e}", manifest.display(), i + 1)))?;
            let clip = Waveform::read_wav(&base.join(&voice.clip_path))?.resampled(PIPELINE_SAMPLE_RATE);
            bank.insert(voice, clip)?;
        }
        Ok(bank)
    }

    pub fn insert(&mut self, voice: VoiceRef, clip: Waveform) -> Result<(), SpeechError> {
        if voice.transcript.trim().is_empty() {
            return Err(SpeechError::Manifest(format!(
                "voice {} has an empty transcript",
                voice.voice_id
            )));
        }
        if clip.is_empty() {
            return Err(SpeechError::Manifest(format!(
                "voice {} has an empty clip",
                voice.voice_id
            )));
        }
        if self.clips.contains_key(&voice.voice_id) {
            return Err(SpeechError::Manifest(format!("duplicate voice id {}", voice.voice_id)));
        }
        self.clips
            .insert(voice.voice_id.clone(), clip.resampled(PIPELINE_SAMPLE_RATE));
        self.voices.push(voice);
        Ok(())
    }

    pub fn clip(&self, voice_id: &str) -> Option<&Waveform> {
        self.clips.get(voice_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoiceQuery {
    pub country_of_origin: Country,
    pub gender: Gender,
}

/// How far the match was relaxed, in the order tried.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relaxation {
    Exact,
    GenderOnly,
    CountryOnly,
    Any,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoiceSelection {
    pub voice: VoiceRef,
    pub relaxation: Relaxation,
}

impl VoiceSelection {
    pub fn relaxed(&self) -> bool {
        self.relaxation != Relaxation::Exact
    }
}

/// Samples a voice matching country and gender, relaxing to gender only,
/// then country only, then any voice. Candidates are ordered by id so the
/// choice depends only on the bank contents and the RNG.
pub fn select_voice<R: Rng + ?Sized>(
    query: VoiceQuery,
    bank: &[VoiceRef],
    rng: &mut R,
) -> Result<VoiceSelection, SpeechError> {
    if bank.is_empty() {
        return Err(SpeechError::EmptyVoiceBank);
    }
    let tiers: [(Relaxation, &dyn Fn(&VoiceRef) -> bool); 4] = [
        (Relaxation::Exact, &|v| {
            v.country_of_origin == query.country_of_origin && v.gender == query.gender
        }),
        (Relaxation::GenderOnly, &|v| v.gender == query.gender),
        (Relaxation::CountryOnly, &|v| {
            v.country_of_origin == query.country_of_origin
        }),
        (Relaxation::Any, &|_| true),
    ];
    for (relaxation, pred) in tiers {
        let mut candidates: Vec<&VoiceRef> = bank.iter().filter(|v| pred(v)).collect();
        if candidates.is_empty() {
            continue;
        }
        candidates.sort_by(|a, b| a.voice_id.cmp(&b.voice_id));
        let voice = (*candidates.choose(rng).expect("non-empty")).clone();
        if relaxation != Relaxation::Exact {
            warn!(?query, voice_id = %voice.voice_id, ?relaxation, "voice match relaxed");
        }
        return Ok(VoiceSelection { voice, relaxation });
    }
    unreachable!("the last tier accepts every voice")
}
