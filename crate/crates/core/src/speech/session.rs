use rand::Rng;
use serde::{Deserialize, Serialize};

use super::wave::{Waveform, PIPELINE_SAMPLE_RATE};
use super::SpeechError;
use crate::dialogue::{Speaker, Transcript};

/// Silence between consecutive utterances: `base_s ± jitter_s`, uniform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GapPolicy {
    pub base_s: f64,
    pub jitter_s: f64,
}

impl Default for GapPolicy {
    fn default() -> Self {
        Self {
            base_s: 0.6,
            jitter_s: 0.2,
        }
    }
}

impl GapPolicy {
    pub fn draw<R: Rng + ?Sized>(&self, n_gaps: usize, rng: &mut R) -> Vec<f64> {
        (0..n_gaps)
            .map(|_| {
                if self.jitter_s > 0.0 {
                    rng.random_range(self.base_s - self.jitter_s..=self.base_s + self.jitter_s)
                } else {
                    self.base_s
                }
                .max(0.0)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceClip {
    pub turn_index: usize,
    pub voice_id: String,
    pub waveform: Waveform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedUtterance {
    pub turn_index: usize,
    pub speaker: Speaker,
    pub voice_id: String,
    pub text: String,
    pub start_sample: usize,
    pub num_samples: usize,
    pub offset_s: f64,
    pub duration_s: f64,
}

/// Contents of `alignment.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub conversation_id: String,
    pub sample_rate: u32,
    pub total_samples: usize,
    pub duration_s: f64,
    pub gaps_s: Vec<f64>,
    pub utterances: Vec<AlignedUtterance>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioSession {
    pub alignment: Alignment,
    pub waveform: Waveform,
}

fn gap_samples(gap_s: f64) -> usize {
    (gap_s * f64::from(PIPELINE_SAMPLE_RATE)).round() as usize
}

/// Concatenates one clip per spoken turn, in turn order, with the given gaps.
pub fn assemble_session(
    transcript: &Transcript,
    clips: &[UtteranceClip],
    gaps_s: &[f64],
) -> Result<AudioSession, SpeechError> {
    let spoken: Vec<_> = transcript.spoken_turns().collect();
    if spoken.is_empty() {
        return Err(SpeechError::Session("transcript has no spoken turns".into()));
    }
    if clips.len() != spoken.len() {
        return Err(SpeechError::Session(format!(
            "{} clips for {} spoken turns",
            clips.len(),
            spoken.len()
        )));
    }
    if gaps_s.len() != spoken.len() - 1 {
        return Err(SpeechError::Session(format!(
            "{} gaps for {} utterances",
            gaps_s.len(),
            spoken.len()
        )));
    }
    let mut samples = Vec::new();
    let mut utterances = Vec::with_capacity(clips.len());
    for (i, (turn, clip)) in spoken.iter().zip(clips).enumerate() {
        if clip.turn_index != turn.index {
            return Err(SpeechError::Session(format!(
                "clip {i} is for turn {}, expected turn {}",
                clip.turn_index, turn.index
            )));
        }
        if clip.waveform.sample_rate != PIPELINE_SAMPLE_RATE {
            return Err(SpeechError::RateMismatch {
                what: format!("clip for turn {}", turn.index),
                expected: PIPELINE_SAMPLE_RATE,
                actual: clip.waveform.sample_rate,
            });
        }
        if i > 0 {
            samples.resize(samples.len() + gap_samples(gaps_s[i - 1]), 0.0);
        }
        let start = samples.len();
        samples.extend(clip.waveform.samples.iter().map(|s| s.clamp(-1.0, 1.0)));
        utterances.push(AlignedUtterance {
            turn_index: turn.index,
            speaker: turn.speaker,
            voice_id: clip.voice_id.clone(),
            text: turn.utterance.clone().unwrap_or_default(),
            start_sample: start,
            num_samples: clip.waveform.len(),
            offset_s: start as f64 / f64::from(PIPELINE_SAMPLE_RATE),
            duration_s: clip.waveform.duration_s(),
        });
    }
    let waveform = Waveform::new(PIPELINE_SAMPLE_RATE, samples);
    Ok(AudioSession {
        alignment: Alignment {
            conversation_id: transcript.conversation_id.clone(),
            sample_rate: PIPELINE_SAMPLE_RATE,
            total_samples: waveform.len(),
            duration_s: waveform.duration_s(),
            gaps_s: gaps_s.to_vec(),
            utterances,
        },
        waveform,
    })
}

impl Alignment {
    /// Ordering and duration invariants; one message per violation.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let clip_total: usize = self.utterances.iter().map(|u| u.num_samples).sum();
        let gap_total: usize = self.gaps_s.iter().map(|g| gap_samples(*g)).sum();
        if clip_total + gap_total != self.total_samples {
            out.push(format!(
                "{} clip + {} gap samples != {} total",
                clip_total, gap_total, self.total_samples
            ));
        }
        for w in self.utterances.windows(2) {
            if w[1].turn_index <= w[0].turn_index {
                out.push(format!("turn {} after turn {}", w[1].turn_index, w[0].turn_index));
            }
            if w[1].start_sample < w[0].start_sample + w[0].num_samples {
                out.push(format!("turn {} overlaps its predecessor", w[1].turn_index));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::{Action, DialogueTurn, RenderedPrompts, Termination};
    use crate::persona::SeededPersonaSampler;
    use crate::rng::seeded;

    fn transcript(n: usize) -> Transcript {
        let case = crate::case::TriageCase {
            case_id: "s".into(),
            source: crate::case::Source::Etek,
            chief_complaint: "x".into(),
            vitals: Default::default(),
            pain_score: 1,
            ground_truth_acuity: 5,
            scale: Some(crate::case::Scale::Ats),
            patient_demographics_hint: None,
        };
        let s = SeededPersonaSampler::default();
        Transcript {
            conversation_id: "c".into(),
            case_id: "s".into(),
            scale: crate::case::Scale::Ats,
            nurse_persona: s.sample_nurse(&mut seeded(1)),
            patient_persona: s.sample_patient(&case, &mut seeded(1)),
            generator_model_id: "m".into(),
            turns: (0..n)
                .map(|i| DialogueTurn {
                    index: i,
                    speaker: if i % 2 == 0 { Speaker::Nurse } else { Speaker::Patient },
                    action: Action::Speak,
                    utterance: Some(format!("utterance {i}")),
                    vital_name: None,
                    vital_value: None,
                    decision_log: None,
                })
                .collect(),
            final_decision: None,
            final_decision_from_cap: false,
            termination: Termination::TurnCap,
            abort_reason: None,
            prompts: RenderedPrompts {
                nurse_system: String::new(),
                patient_system: String::new(),
            },
        }
    }

    fn clip(turn_index: usize, len: usize) -> UtteranceClip {
        UtteranceClip {
            turn_index,
            voice_id: "v".into(),
            waveform: Waveform::new(PIPELINE_SAMPLE_RATE, vec![0.1; len]),
        }
    }

    #[test]
    fn empty_transcript_is_rejected() {
        assert!(assemble_session(&transcript(0), &[], &[]).is_err());
    }

    #[test]
    fn two_utterances_with_gap() {
        let s = assemble_session(&transcript(2), &[clip(0, 24_000), clip(1, 12_000)], &[0.6]).unwrap();
        assert_eq!(s.waveform.len(), 24_000 + 14_400 + 12_000);
        assert!((s.alignment.duration_s - 2.1).abs() < 1e-12);
        assert_eq!(s.alignment.utterances[1].start_sample, 38_400);
        assert!(s.alignment.violations().is_empty());
    }

    #[test]
    fn offsets_strictly_increase() {
        let gaps = GapPolicy::default().draw(4, &mut seeded(5));
        assert!(gaps.iter().all(|g| (0.4..=0.8).contains(g)));
        let clips: Vec<_> = (0..5).map(|i| clip(i, 1000 + i)).collect();
        let s = assemble_session(&transcript(5), &clips, &gaps).unwrap();
        assert!(s.alignment.utterances.windows(2).all(|w| w[1].offset_s > w[0].offset_s));
    }

    #[test]
    fn misordered_clips_are_rejected() {
        let err = assemble_session(&transcript(2), &[clip(1, 10), clip(0, 10)], &[0.6]);
        assert!(err.is_err());
    }
}
