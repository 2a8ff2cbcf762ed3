//! Small builders for hand-made transcripts, used by tests and the demo corpus.

use crate::case::{Scale, VitalName};
use crate::dialogue::{Action, DialogueTurn, RenderedPrompts, Speaker, Termination, Transcript};
use crate::persona::{
    AgeGroup, CognitiveState, Country, ExperienceLevel, Gender, GuidelineAdherence, NursePersona, PatientPersona,
    RiskTolerance,
};
use crate::policy::TriageDecision;

pub fn nurse(experience: ExperienceLevel, risk: RiskTolerance, adherence: GuidelineAdherence) -> NursePersona {
    NursePersona {
        gender: Gender::Female,
        experience_level: experience,
        risk_tolerance: risk,
        guideline_adherence: adherence,
    }
}

pub fn patient() -> PatientPersona {
    PatientPersona {
        gender: Gender::Male,
        country_of_origin: Country::Australian,
        age_group: AgeGroup::Adult,
        language_proficiency: 5,
        verbosity: 3,
        disfluency_rate: 1,
        recall_accuracy: 4,
        cognitive_state: CognitiveState::Alert,
        topic_drift: 1,
    }
}

fn decision(acuity: u8, confidence: f64, turn_index: usize) -> TriageDecision {
    TriageDecision {
        acuity,
        confidence,
        red_flags_cited: Vec::new(),
        turn_index,
    }
}

/// Builds a structurally valid transcript: `exchanges` speak/answer pairs,
/// `vital_checks` request/result pairs, then a triage turn with the given
/// acuity and confidence.
pub struct TranscriptBuilder {
    pub conversation_id: String,
    pub case_id: String,
    pub scale: Scale,
    pub nurse: NursePersona,
    pub patient: PatientPersona,
    pub exchanges: Vec<(String, String)>,
    pub vital_checks: usize,
    pub final_acuity: u8,
    pub confidence: f64,
}

impl TranscriptBuilder {
    pub fn new(conversation_id: &str, case_id: &str, nurse: NursePersona) -> Self {
        Self {
            conversation_id: conversation_id.into(),
            case_id: case_id.into(),
            scale: Scale::Esi,
            nurse,
            patient: patient(),
            exchanges: vec![("What brings you in today?".into(), "My chest hurts.".into())],
            vital_checks: 0,
            final_acuity: 3,
            confidence: 0.5,
        }
    }

    pub fn vital_checks(mut self, n: usize) -> Self {
        self.vital_checks = n;
        self
    }

    pub fn decision(mut self, acuity: u8, confidence: f64) -> Self {
        self.final_acuity = acuity;
        self.confidence = confidence;
        self
    }

    pub fn exchanges(mut self, exchanges: Vec<(String, String)>) -> Self {
        self.exchanges = exchanges;
        self
    }

    pub fn build(self) -> Transcript {
        let mut turns = Vec::new();
        let push =
            |turns: &mut Vec<DialogueTurn>, speaker, action, utterance: Option<String>, vital: Option<VitalName>| {
                let index = turns.len();
                let decision_log = (speaker == Speaker::Nurse).then(|| decision(3, 0.5, index));
                turns.push(DialogueTurn {
                    index,
                    speaker,
                    action,
                    utterance,
                    vital_name: vital,
                    vital_value: None,
                    decision_log,
                });
            };
        for (q, a) in &self.exchanges {
            push(&mut turns, Speaker::Nurse, Action::Speak, Some(q.clone()), None);
            push(&mut turns, Speaker::Patient, Action::Speak, Some(a.clone()), None);
        }
        for i in 0..self.vital_checks {
            let v = VitalName::ALL[i % VitalName::ALL.len()];
            push(&mut turns, Speaker::Nurse, Action::RequestVital, None, Some(v));
            push(
                &mut turns,
                Speaker::Master,
                Action::VitalResult,
                Some(v.format_reading(None)),
                Some(v),
            );
        }
        let idx = turns.len();
        let last = decision(self.final_acuity, self.confidence, idx);
        turns.push(DialogueTurn {
            index: idx,
            speaker: Speaker::Nurse,
            action: Action::Triage,
            utterance: Some(format!("I am assigning level {}.", self.final_acuity)),
            vital_name: None,
            vital_value: None,
            decision_log: Some(last.clone()),
        });
        Transcript {
            conversation_id: self.conversation_id,
            case_id: self.case_id,
            scale: self.scale,
            nurse_persona: self.nurse,
            patient_persona: self.patient,
            generator_model_id: "fixture".into(),
            turns,
            final_decision: Some(last),
            final_decision_from_cap: false,
            termination: Termination::Triaged,
            abort_reason: None,
            prompts: RenderedPrompts {
                nurse_system: String::new(),
                patient_system: String::new(),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn built_transcripts_are_valid() {
        let t = TranscriptBuilder::new(
            "c1",
            "k1",
            nurse(ExperienceLevel::Expert, RiskTolerance::Low, GuidelineAdherence::Strict),
        )
        .vital_checks(3)
        .decision(2, 0.9)
        .build();
        assert!(t.check_invariants().is_empty(), "{:?}", t.check_invariants());
        assert_eq!(t.vital_requests(), 3);
    }
}
