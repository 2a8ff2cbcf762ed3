use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::context::{build_nurse_context, build_patient_context, ServedVitals, GROUND_TRUTH_FIELD};
use super::engine::ContextAuditEntry;
use super::{Action, Speaker, Transcript};
use crate::case::{TriageCase, VitalName};
use crate::policy::TriagePolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HidingViolation {
    pub conversation_id: String,
    pub turn_index: usize,
    pub speaker: Speaker,
    pub detail: String,
}

/// Replays every agent context the transcript implies and checks it against
/// the information-hiding rules. When the engine's own audit log is supplied
/// it is checked against the replay as well.
pub fn audit_information_hiding(
    transcript: &Transcript,
    case: &TriageCase,
    policy: &TriagePolicy,
    engine_log: Option<&[ContextAuditEntry]>,
) -> Vec<HidingViolation> {
    let mut out = Vec::new();
    let mut push = |turn_index: usize, speaker: Speaker, detail: String| {
        out.push(HidingViolation {
            conversation_id: transcript.conversation_id.clone(),
            turn_index,
            speaker,
            detail,
        })
    };
    let readings: Vec<(VitalName, String)> = case
        .vitals
        .measured()
        .map(|(n, v)| (n, n.format_reading(Some(v))))
        .collect();

    let mut served = ServedVitals::new();
    for (i, turn) in transcript.turns.iter().enumerate() {
        let prefix = &transcript.turns[..i];
        match turn.speaker {
            Speaker::Nurse => {
                let ctx = build_nurse_context(prefix, policy, &transcript.nurse_persona, &served);
                let text = ctx.full_text();
                if text.contains(GROUND_TRUTH_FIELD) {
                    push(i, Speaker::Nurse, "ground-truth field in nurse context".into());
                }
                for (name, reading) in &readings {
                    if !served.contains_key(name) && text.contains(reading.as_str()) {
                        push(i, Speaker::Nurse, format!("unrequested {name} visible"));
                    }
                }
                if let Some(entry) =
                    engine_log.and_then(|log| log.iter().find(|e| e.turn_index == i && e.speaker == Speaker::Nurse))
                {
                    let expected: BTreeSet<_> = served.keys().copied().collect();
                    let actual: BTreeSet<_> = entry.served_vitals.iter().copied().collect();
                    if expected != actual {
                        push(
                            i,
                            Speaker::Nurse,
                            format!("engine served {actual:?}, requested were {expected:?}"),
                        );
                    }
                    if entry.mentions_ground_truth_field {
                        push(i, Speaker::Nurse, "engine context held the ground-truth field".into());
                    }
                }
            }
            Speaker::Patient => {
                let ctx = build_patient_context(prefix, &transcript.patient_persona, case);
                let text = ctx.full_text();
                if text.contains(GROUND_TRUTH_FIELD) {
                    push(i, Speaker::Patient, "ground-truth field in patient context".into());
                }
                for (name, reading) in &readings {
                    if text.contains(reading.as_str()) {
                        push(i, Speaker::Patient, format!("{name} reading visible to patient"));
                    }
                }
                if let Some(entry) =
                    engine_log.and_then(|log| log.iter().find(|e| e.turn_index == i && e.speaker == Speaker::Patient))
                {
                    if entry.mentions_ground_truth_field || !entry.served_vitals.is_empty() {
                        push(i, Speaker::Patient, "engine patient context held hidden data".into());
                    }
                }
            }
            Speaker::Master => {
                if turn.action == Action::VitalResult {
                    if let Some(name) = turn.vital_name {
                        let truth = case.vitals.get(name);
                        if turn.vital_value != truth {
                            push(
                                i,
                                Speaker::Master,
                                format!("{name} served as {:?}, case has {truth:?}", turn.vital_value),
                            );
                        }
                        served.insert(name, turn.vital_value);
                    }
                }
            }
        }
    }
    if transcript.prompts.patient_system.contains(GROUND_TRUTH_FIELD)
        || transcript.prompts.nurse_system.contains(GROUND_TRUTH_FIELD)
    {
        push(
            0,
            Speaker::Master,
            "ground-truth field in a rendered system prompt".into(),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::simulated::scripted_pair;
    use crate::case::{Scale, Source, VitalSet};
    use crate::dialogue::{run_conversation, Agents, ConversationInputs, EngineConfig};
    use crate::persona::SeededPersonaSampler;
    use crate::policy::load_policy;
    use crate::rng::seeded;

    #[test]
    fn simulated_conversation_is_clean() {
        let case = TriageCase {
            case_id: "a1".into(),
            source: Source::EsiHandbook,
            chief_complaint: "chest pain radiating to the left arm".into(),
            vitals: VitalSet {
                temperature: Some(37.1),
                heart_rate: Some(112.0),
                respiratory_rate: Some(22.0),
                systolic_bp: Some(150.0),
                diastolic_bp: Some(95.0),
                o2_saturation: None,
            },
            pain_score: 8,
            ground_truth_acuity: 2,
            scale: Some(Scale::Esi),
            patient_demographics_hint: None,
        };
        let policy = load_policy(Scale::Esi).unwrap();
        let sampler = SeededPersonaSampler::default();
        let mut rng = seeded(9);
        let nurse = sampler.sample_nurse(&mut rng);
        let patient = sampler.sample_patient(&case, &mut rng);
        let (n, p) = scripted_pair(&case, &nurse, &patient, &mut rng);
        let run = run_conversation(
            ConversationInputs {
                conversation_id: "c",
                case: &case,
                nurse: &nurse,
                patient: &patient,
                policy: &policy,
            },
            Agents { nurse: &n, patient: &p },
            &EngineConfig::default(),
        )
        .unwrap();
        let v = audit_information_hiding(&run.transcript, &case, &policy, Some(&run.audit));
        assert!(v.is_empty(), "{v:?}");
    }

    #[test]
    fn tampered_vital_is_reported() {
        let case = TriageCase {
            case_id: "a2".into(),
            source: Source::Etek,
            chief_complaint: "cut hand".into(),
            vitals: VitalSet {
                heart_rate: Some(80.0),
                ..VitalSet::default()
            },
            pain_score: 3,
            ground_truth_acuity: 4,
            scale: Some(Scale::Ats),
            patient_demographics_hint: None,
        };
        let policy = load_policy(Scale::Ats).unwrap();
        let sampler = SeededPersonaSampler::default();
        let nurse = sampler.sample_nurse(&mut seeded(1));
        let patient = sampler.sample_patient(&case, &mut seeded(2));
        let (n, p) = scripted_pair(&case, &nurse, &patient, &mut seeded(3));
        let mut run = run_conversation(
            ConversationInputs {
                conversation_id: "c2",
                case: &case,
                nurse: &nurse,
                patient: &patient,
                policy: &policy,
            },
            Agents { nurse: &n, patient: &p },
            &EngineConfig::default(),
        )
        .unwrap();
        let idx = run
            .transcript
            .turns
            .iter()
            .position(|t| t.action == Action::VitalResult)
            .unwrap();
        run.transcript.turns[idx].vital_value = Some(81.0);
        let v = audit_information_hiding(&run.transcript, &case, &policy, None);
        assert!(v.iter().any(|x| x.speaker == Speaker::Master));
        run.transcript.turns[idx].vital_value = Some(80.0);
        let entry = run.audit.iter_mut().find(|e| e.turn_index == idx + 1).unwrap();
        entry.served_vitals.clear();
        let v = audit_information_hiding(&run.transcript, &case, &policy, Some(&run.audit));
        assert_eq!(v.len(), 1, "{v:?}");
    }
}
