use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use super::wave::{Waveform, PIPELINE_SAMPLE_RATE};
use super::SpeechError;

pub const AMBIENT_GAIN_DB: f64 = -32.0;
pub const EVENT_GAIN_MIN_DB: f64 = -26.0;
pub const EVENT_GAIN_MAX_DB: f64 = -14.0;
pub const PEAK_CEILING: f32 = 0.99;

pub fn db_to_linear(gain_db: f64) -> f64 {
    debug_assert!(gain_db.is_finite());
    10f64.powf(gain_db / 20.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseCategory {
    KeyboardTyping,
    TelephoneRinging,
    InfantCrying,
    AmbulanceSiren,
}

impl NoiseCategory {
    pub const ALL: [NoiseCategory; 4] = [
        NoiseCategory::KeyboardTyping,
        NoiseCategory::TelephoneRinging,
        NoiseCategory::InfantCrying,
        NoiseCategory::AmbulanceSiren,
    ];
}

impl fmt::Display for NoiseCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NoiseCategory::KeyboardTyping => "keyboard_typing",
            NoiseCategory::TelephoneRinging => "telephone_ringing",
            NoiseCategory::InfantCrying => "infant_crying",
            NoiseCategory::AmbulanceSiren => "ambulance_siren",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Ambient,
    Event,
}

/// One line of `noise.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseAsset {
    pub asset_id: String,
    pub kind: NoiseKind,
    #[serde(default)]
    pub category: Option<NoiseCategory>,
    /// Relative to the manifest's directory.
    pub path: PathBuf,
}

/// Loaded noise assets at the pipeline rate.
#[derive(Debug, Clone, Default)]
pub struct NoiseBank {
    pub assets: Vec<NoiseAsset>,
    pub audio: BTreeMap<String, Waveform>,
}

impl NoiseBank {
    pub fn load(manifest: &Path) -> Result<Self, SpeechError> {
        let text = std::fs::read_to_string(manifest).map_err(|e| SpeechError::Io {
            path: manifest.to_path_buf(),
            source: e,
        })?;
        let base = manifest.parent().unwrap_or(Path::new("."));
        let mut bank = NoiseBank::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let asset: NoiseAsset = serde_json::from_str(line)
                .map_err(|e| SpeechError::Manifest(format!("{}:{}: {e}", manifest.display(), i + 1)))?;
            if asset.kind == NoiseKind::Event && asset.category.is_none() {
                return Err(SpeechError::Manifest(format!(
                    "event asset {} has no category",
                    asset.asset_id
                )));
            }
            let wave = Waveform::read_wav(&base.join(&asset.path))?.resampled(PIPELINE_SAMPLE_RATE);
            bank.insert(asset, wave)?;
        }
        Ok(bank)
    }

    pub fn insert(&mut self, asset: NoiseAsset, wave: Waveform) -> Result<(), SpeechError> {
        if wave.is_empty() {
            return Err(SpeechError::Manifest(format!("asset {} is empty", asset.asset_id)));
        }
        if self.audio.contains_key(&asset.asset_id) {
            return Err(SpeechError::Manifest(format!("duplicate asset id {}", asset.asset_id)));
        }
        self.audio.insert(asset.asset_id.clone(), wave);
        self.assets.push(asset);
        Ok(())
    }

    fn ambient_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self
            .assets
            .iter()
            .filter(|a| a.kind == NoiseKind::Ambient)
            .map(|a| a.asset_id.as_str())
            .collect();
        ids.sort_unstable();
        ids
    }

    fn event_ids(&self, category: NoiseCategory) -> Vec<&str> {
        let mut ids: Vec<&str> = self
            .assets
            .iter()
            .filter(|a| a.kind == NoiseKind::Event && a.category == Some(category))
            .map(|a| a.asset_id.as_str())
            .collect();
        ids.sort_unstable();
        ids
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixConfig {
    pub ambient_gain_db: f64,
    pub event_gain_min_db: f64,
    pub event_gain_max_db: f64,
    /// One event per this many seconds of session, rounded.
    pub seconds_per_event: f64,
    pub peak_ceiling: f32,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            ambient_gain_db: AMBIENT_GAIN_DB,
            event_gain_min_db: EVENT_GAIN_MIN_DB,
            event_gain_max_db: EVENT_GAIN_MAX_DB,
            seconds_per_event: 20.0,
            peak_ceiling: PEAK_CEILING,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmbientBed {
    pub asset_id: String,
    pub gain_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixEvent {
    pub asset_id: String,
    pub category: NoiseCategory,
    pub onset_s: f64,
    pub gain_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixPlan {
    pub sample_rate: u32,
    pub num_samples: usize,
    pub duration_s: f64,
    pub peak_ceiling: f32,
    pub ambient: Option<AmbientBed>,
    pub events: Vec<MixEvent>,
}

impl MixPlan {
    /// Plan invariants; one message per violation.
    pub fn violations(&self, config: &MixConfig) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(a) = &self.ambient {
            if a.gain_db != config.ambient_gain_db {
                out.push(format!(
                    "ambient gain {} dB is not {}",
                    a.gain_db, config.ambient_gain_db
                ));
            }
        }
        for (i, e) in self.events.iter().enumerate() {
            if !(config.event_gain_min_db..=config.event_gain_max_db).contains(&e.gain_db) {
                out.push(format!("event {i} gain {} dB out of range", e.gain_db));
            }
            if !(0.0..self.duration_s).contains(&e.onset_s) {
                out.push(format!("event {i} onset {} s outside the session", e.onset_s));
            }
        }
        out
    }
}

/// Draws a mix plan for a session of `num_samples` samples at the pipeline rate.
pub fn plan_mix<R: Rng + ?Sized>(num_samples: usize, bank: &NoiseBank, config: &MixConfig, rng: &mut R) -> MixPlan {
    let duration_s = num_samples as f64 / f64::from(PIPELINE_SAMPLE_RATE);
    let ambient = bank.ambient_ids().choose(rng).map(|id| AmbientBed {
        asset_id: id.to_string(),
        gain_db: config.ambient_gain_db,
    });
    let categories: Vec<NoiseCategory> = NoiseCategory::ALL
        .into_iter()
        .filter(|c| !bank.event_ids(*c).is_empty())
        .collect();
    let n_events = if categories.is_empty() || duration_s <= 0.0 {
        0
    } else {
        (duration_s / config.seconds_per_event).round() as usize
    };
    let mut events: Vec<MixEvent> = (0..n_events)
        .map(|_| {
            let category = *categories.choose(rng).expect("non-empty categories");
            let asset_id = bank
                .event_ids(category)
                .choose(rng)
                .expect("category has assets")
                .to_string();
            MixEvent {
                asset_id,
                category,
                onset_s: rng.random_range(0.0..duration_s),
                gain_db: rng.random_range(config.event_gain_min_db..=config.event_gain_max_db),
            }
        })
        .collect();
    events.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s));
    MixPlan {
        sample_rate: PIPELINE_SAMPLE_RATE,
        num_samples,
        duration_s,
        peak_ceiling: config.peak_ceiling,
        ambient,
        events,
    }
}

/// Linear mix before limiting: speech, plus the ambient bed looped over the
/// full length, plus each event from its onset sample (truncated at the end).
pub fn mix_tracks(speech: &[f32], ambient: Option<(&[f32], f64)>, events: &[(&[f32], usize, f64)]) -> Vec<f32> {
    let mut out: Vec<f64> = speech.iter().map(|&s| f64::from(s)).collect();
    if let Some((bed, gain_db)) = ambient {
        if !bed.is_empty() {
            let g = db_to_linear(gain_db);
            for (i, o) in out.iter_mut().enumerate() {
                *o += g * f64::from(bed[i % bed.len()]);
            }
        }
    }
    for &(clip, onset, gain_db) in events {
        let g = db_to_linear(gain_db);
        for (o, &s) in out.iter_mut().skip(onset).zip(clip) {
            *o += g * f64::from(s);
        }
    }
    out.into_iter().map(|s| s as f32).collect()
}

/// Hard clip to `±ceiling`; returns the number of samples clipped.
pub fn hard_limit(samples: &mut [f32], ceiling: f32) -> usize {
    let mut clipped = 0;
    for s in samples.iter_mut() {
        if s.abs() > ceiling {
            *s = s.clamp(-ceiling, ceiling);
            clipped += 1;
        }
    }
    clipped
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixOutput {
    pub waveform: Waveform,
    pub clipped_samples: usize,
}

/// Renders a plan over a speech track.
pub fn mix_session(speech: &Waveform, plan: &MixPlan, bank: &NoiseBank) -> Result<MixOutput, SpeechError> {
    if speech.sample_rate != plan.sample_rate {
        return Err(SpeechError::RateMismatch {
            what: "session".into(),
            expected: plan.sample_rate,
            actual: speech.sample_rate,
        });
    }
    if speech.len() != plan.num_samples {
        return Err(SpeechError::Plan(format!(
            "plan covers {} samples, session has {}",
            plan.num_samples,
            speech.len()
        )));
    }
    let asset = |id: &str| -> Result<&Waveform, SpeechError> {
        let w = bank
            .audio
            .get(id)
            .ok_or_else(|| SpeechError::Plan(format!("unknown noise asset {id}")))?;
        if w.sample_rate != plan.sample_rate {
            return Err(SpeechError::RateMismatch {
                what: format!("asset {id}"),
                expected: plan.sample_rate,
                actual: w.sample_rate,
            });
        }
        Ok(w)
    };
    let ambient = match &plan.ambient {
        Some(a) => Some((asset(&a.asset_id)?.samples.as_slice(), a.gain_db)),
        None => None,
    };
    let mut events = Vec::with_capacity(plan.events.len());
    for e in &plan.events {
        if !(0.0..plan.duration_s).contains(&e.onset_s) {
            return Err(SpeechError::Plan(format!(
                "event onset {} s beyond session duration {} s",
                e.onset_s, plan.duration_s
            )));
        }
        let onset = (e.onset_s * f64::from(plan.sample_rate)).floor() as usize;
        events.push((asset(&e.asset_id)?.samples.as_slice(), onset, e.gain_db));
    }
    let mut samples = mix_tracks(&speech.samples, ambient, &events);
    let clipped_samples = hard_limit(&mut samples, plan.peak_ceiling);
    if clipped_samples > 0 {
        warn!(clipped_samples, ceiling = plan.peak_ceiling, "limiter engaged");
    } else {
        info!(events = plan.events.len(), "session mixed without clipping");
    }
    Ok(MixOutput {
        waveform: Waveform::new(plan.sample_rate, samples),
        clipped_samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn sine(len: usize, amp: f32) -> Vec<f32> {
        (0..len)
            .map(|i| amp * (2.0 * std::f64::consts::PI * 500.0 * i as f64 / 24_000.0).sin() as f32)
            .collect()
    }

    fn bank() -> NoiseBank {
        let mut bank = NoiseBank::default();
        bank.insert(
            NoiseAsset {
                asset_id: "bed".into(),
                kind: NoiseKind::Ambient,
                category: None,
                path: "bed.wav".into(),
            },
            Waveform::new(24_000, sine(24_000, 1.0)),
        )
        .unwrap();
        for c in NoiseCategory::ALL {
            bank.insert(
                NoiseAsset {
                    asset_id: format!("{c}"),
                    kind: NoiseKind::Event,
                    category: Some(c),
                    path: format!("{c}.wav").into(),
                },
                Waveform::new(24_000, sine(12_000, 0.5)),
            )
            .unwrap();
        }
        bank
    }

    #[test]
    fn db_conversions() {
        assert_eq!(db_to_linear(0.0), 1.0);
        assert!((db_to_linear(-20.0) - 0.1).abs() < 1e-15);
        assert!((db_to_linear(-32.0) - 0.02512).abs() < 1e-5);
    }

    #[test]
    fn silent_ambient_leaves_speech_unchanged() {
        let speech = sine(1000, 0.3);
        let silent = vec![0.0f32; 200];
        assert_eq!(mix_tracks(&speech, Some((&silent, -32.0)), &[]), speech);
    }

    #[test]
    fn plans_respect_gain_and_density_rules() {
        let cfg = MixConfig::default();
        let plan = plan_mix(24_000 * 100, &bank(), &cfg, &mut seeded(3));
        assert_eq!(plan.events.len(), 5);
        assert!(plan.violations(&cfg).is_empty());
        assert_eq!(plan.ambient.as_ref().unwrap().gain_db, -32.0);
        let short = plan_mix(24_000 * 9, &bank(), &cfg, &mut seeded(3));
        assert!(short.events.is_empty());
    }

    #[test]
    fn out_of_range_onset_is_an_error() {
        let b = bank();
        let mut plan = plan_mix(24_000, &b, &MixConfig::default(), &mut seeded(1));
        plan.events.push(MixEvent {
            asset_id: "infant_crying".into(),
            category: NoiseCategory::InfantCrying,
            onset_s: 2.0,
            gain_db: -20.0,
        });
        let speech = Waveform::silence(24_000, 24_000);
        assert!(matches!(mix_session(&speech, &plan, &b), Err(SpeechError::Plan(_))));
        let wrong_rate = Waveform::silence(16_000, 24_000);
        assert!(matches!(
            mix_session(&wrong_rate, &plan, &b),
            Err(SpeechError::RateMismatch { .. })
        ));
    }

    #[test]
    fn limiter_caps_and_counts() {
        let speech = Waveform::new(24_000, vec![0.98; 100]);
        let mut b = NoiseBank::default();
        b.insert(
            NoiseAsset {
                asset_id: "loud".into(),
                kind: NoiseKind::Event,
                category: Some(NoiseCategory::AmbulanceSiren),
                path: "x.wav".into(),
            },
            Waveform::new(24_000, vec![1.0; 50]),
        )
        .unwrap();
        let plan = MixPlan {
            sample_rate: 24_000,
            num_samples: 100,
            duration_s: 100.0 / 24_000.0,
            peak_ceiling: PEAK_CEILING,
            ambient: None,
            events: vec![MixEvent {
                asset_id: "loud".into(),
                category: NoiseCategory::AmbulanceSiren,
                onset_s: 0.0,
                gain_db: -14.0,
            }],
        };
        let out = mix_session(&speech, &plan, &b).unwrap();
        assert_eq!(out.clipped_samples, 50);
        assert!(out.waveform.peak() <= PEAK_CEILING);
    }

    proptest! {
        #[test]
        fn db_is_monotone_and_decadic(x in -120.0f64..40.0, d in 0.001f64..10.0) {
            prop_assert!(db_to_linear(x + d) > db_to_linear(x));
            let lhs = db_to_linear(x + 20.0);
            let rhs = 10.0 * db_to_linear(x);
            prop_assert!(((lhs - rhs) / rhs).abs() < 1e-9);
        }
    }
}
