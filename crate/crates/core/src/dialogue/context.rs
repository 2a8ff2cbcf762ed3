use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::action::action_json;
use super::{Action, DialogueTurn, Speaker};
use crate::backend::ChatMessage;
use crate::case::{TriageCase, VitalName};
use crate::persona::{NursePersona, PatientPersona};
use crate::policy::TriagePolicy;

/// Vitals released to the nurse so far; `None` is an explicit "not available".
pub type ServedVitals = BTreeMap<VitalName, Option<f64>>;

/// Field name of the hidden label; it must never reach an agent context.
pub const GROUND_TRUTH_FIELD: &str = "ground_truth_acuity";

pub(crate) const OPENING_CUE: &str =
    "[Dialogue master] The patient has arrived at the triage desk. Begin your assessment.";

#[derive(Debug, Clone, PartialEq)]
pub struct ContextPayload {
    pub system: String,
    pub history: Vec<ChatMessage>,
    pub served_vitals: ServedVitals,
}

impl ContextPayload {
    /// Everything an agent would receive, concatenated for audits.
    pub fn full_text(&self) -> String {
        let mut out = self.system.clone();
        for m in &self.history {
            out.push('\n');
            out.push_str(&m.content);
        }
        out
    }
}

const NURSE_OUTPUT_CONTRACT: &str = "\
Each reply must be ONE JSON object and nothing else:
{\"action\": \"speak\" | \"request_vital\" | \"triage\",
 \"utterance\": \"what you say to the patient (required for speak and triage)\",
 \"vital\": \"temperature | heart_rate | respiratory_rate | systolic_bp | diastolic_bp | o2_saturation (required for request_vital)\",
 \"decision_log\": {\"acuity\": 1-5, \"confidence\": 0.0-1.0, \"red_flags\": [\"red flag ids\"]}}
Take one action per reply. Log your current indicative level, confidence and any red flags on every reply.
Vital signs are only known once you request them from the dialogue master.
Use \"triage\" once, when you assign the final level; the conversation ends there.";

pub(crate) fn nurse_system_prompt(policy: &TriagePolicy, persona: &NursePersona) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "You are an emergency department triage nurse assessing a walk-in patient using the {}.",
        policy.name
    );
    let _ = writeln!(out, "Your persona: {}.", persona.describe());
    let _ = writeln!(
        out,
        "Let your experience, risk tolerance and guideline adherence shape how you question, \
         how often you check vital signs and how cautious your decision is.\n"
    );
    out.push_str(&policy.render_for_adherence(persona.guideline_adherence));
    out.push('\n');
    out.push_str(NURSE_OUTPUT_CONTRACT);
    out
}

pub(crate) fn patient_system_prompt(persona: &PatientPersona, case: &TriageCase) -> String {
    format!(
        "You are a patient who has just arrived at an emergency department triage desk.\n\
         Your persona: {}.\n\
         Your main problem: {}. Your pain level is {} out of 10.\n\
         Answer the nurse in the first person, in plain spoken English, as this persona would: \
         match the language proficiency, verbosity, disfluency rate (use fillers, repetitions and \
         self-corrections accordingly), recall accuracy, cognitive state and topic drift.\n\
         You do not know your measured vital signs or how urgent your case is. \
         Reply with your spoken words only.",
        persona.describe(),
        case.chief_complaint.trim(),
        case.pain_score
    )
}

fn served_section(served: &ServedVitals) -> String {
    let mut out = String::from("\n\nVital signs measured so far:");
    if served.is_empty() {
        out.push_str(" none requested yet.");
    }
    for (name, value) in served {
        out.push_str("\n  ");
        out.push_str(&name.format_reading(*value));
    }
    out
}

/// Nurse context: policy, persona, history and only the vitals in `served`.
pub fn build_nurse_context(
    turns: &[DialogueTurn],
    policy: &TriagePolicy,
    persona: &NursePersona,
    served: &ServedVitals,
) -> ContextPayload {
    let mut system = nurse_system_prompt(policy, persona);
    system.push_str(&served_section(served));
    let mut history = vec![ChatMessage::user(OPENING_CUE)];
    for turn in turns {
        match (turn.speaker, turn.action) {
            (Speaker::Nurse, _) => history.push(ChatMessage::assistant(action_json(turn))),
            (Speaker::Patient, _) => history.push(ChatMessage::user(format!(
                "Patient: {}",
                turn.utterance.as_deref().unwrap_or_default()
            ))),
            (Speaker::Master, Action::VitalResult) => {
                if let Some(name) = turn.vital_name {
                    if served.contains_key(&name) {
                        history.push(ChatMessage::user(format!(
                            "[Dialogue master] {}",
                            name.format_reading(turn.vital_value)
                        )));
                    }
                }
            }
            (Speaker::Master, _) => {}
        }
    }
    ContextPayload {
        system,
        history,
        served_vitals: served.clone(),
    }
}

/// Patient context: persona, chief complaint, pain score and the spoken
/// history. Master turns and all structured vitals are excluded.
pub fn build_patient_context(turns: &[DialogueTurn], persona: &PatientPersona, case: &TriageCase) -> ContextPayload {
    let system = patient_system_prompt(persona, case);
    let mut history = Vec::new();
    for turn in turns {
        let Some(text) = turn.utterance.as_deref() else {
            continue;
        };
        match turn.speaker {
            Speaker::Nurse => history.push(ChatMessage::user(format!("Nurse: {text}"))),
            Speaker::Patient => history.push(ChatMessage::assistant(text)),
            Speaker::Master => {}
        }
    }
    ContextPayload {
        system,
        history,
        served_vitals: ServedVitals::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::{Scale, Source, VitalSet};
    use crate::persona::SeededPersonaSampler;
    use crate::policy::{load_policy, TriageDecision};
    use crate::rng::seeded;

    fn case() -> TriageCase {
        TriageCase {
            case_id: "ctx".into(),
            source: Source::EsiHandbook,
            chief_complaint: "shortness of breath".into(),
            vitals: VitalSet {
                temperature: Some(38.4),
                heart_rate: Some(123.0),
                respiratory_rate: Some(28.0),
                systolic_bp: Some(101.0),
                diastolic_bp: Some(67.0),
                o2_saturation: Some(89.0),
            },
            pain_score: 6,
            ground_truth_acuity: 2,
            scale: Some(Scale::Esi),
            patient_demographics_hint: None,
        }
    }

    fn readings(c: &TriageCase) -> Vec<String> {
        c.vitals.measured().map(|(n, v)| n.format_reading(Some(v))).collect()
    }

    fn nurse_turn(index: usize, action: Action, vital: Option<VitalName>) -> DialogueTurn {
        DialogueTurn {
            index,
            speaker: Speaker::Nurse,
            action,
            utterance: Some("Let me check.".into()),
            vital_name: vital,
            vital_value: None,
            decision_log: Some(TriageDecision {
                acuity: 3,
                confidence: 0.5,
                red_flags_cited: vec![],
                turn_index: index,
            }),
        }
    }

    #[test]
    fn nurse_context_starts_without_vitals() {
        let c = case();
        let policy = load_policy(Scale::Esi).unwrap();
        let nurse = SeededPersonaSampler::default().sample_nurse(&mut seeded(1));
        let ctx = build_nurse_context(&[], &policy, &nurse, &ServedVitals::new());
        let text = ctx.full_text();
        assert!(ctx.served_vitals.is_empty());
        for r in readings(&c) {
            assert!(!text.contains(&r), "{r} leaked");
        }
        assert!(!text.contains(GROUND_TRUTH_FIELD));
        assert!(text.contains(&policy.name));
    }

    #[test]
    fn nurse_context_after_heart_rate_has_only_heart_rate() {
        let c = case();
        let policy = load_policy(Scale::Esi).unwrap();
        let nurse = SeededPersonaSampler::default().sample_nurse(&mut seeded(1));
        let turns = vec![
            nurse_turn(0, Action::RequestVital, Some(VitalName::HeartRate)),
            DialogueTurn {
                index: 1,
                speaker: Speaker::Master,
                action: Action::VitalResult,
                utterance: Some(VitalName::HeartRate.format_reading(Some(123.0))),
                vital_name: Some(VitalName::HeartRate),
                vital_value: Some(123.0),
                decision_log: None,
            },
        ];
        let served = ServedVitals::from([(VitalName::HeartRate, Some(123.0))]);
        let ctx = build_nurse_context(&turns, &policy, &nurse, &served);
        let text = ctx.full_text();
        let present: Vec<_> = c
            .vitals
            .measured()
            .filter(|(n, v)| text.contains(&n.format_reading(Some(*v))))
            .map(|(n, _)| n)
            .collect();
        assert_eq!(present, vec![VitalName::HeartRate]);
        assert_eq!(ctx.served_vitals.keys().copied().collect::<Vec<_>>(), present);
    }

    #[test]
    fn patient_context_excludes_vitals_and_acuity() {
        let c = case();
        let patient = SeededPersonaSampler::default().sample_patient(&c, &mut seeded(2));
        let turns = vec![nurse_turn(0, Action::Speak, None)];
        let ctx = build_patient_context(&turns, &patient, &c);
        let text = ctx.full_text();
        for r in readings(&c) {
            assert!(!text.contains(&r));
        }
        assert!(!text.contains(GROUND_TRUTH_FIELD));
        assert!(!text.to_lowercase().contains("acuity"));
        assert!(text.contains("6 out of 10"));
        assert!(text.contains("shortness of breath"));
    }
}
