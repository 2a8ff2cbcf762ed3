use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::debug;

use super::action::parse_nurse_action;
use super::context::{
    build_nurse_context, build_patient_context, nurse_system_prompt, patient_system_prompt, ServedVitals,
    GROUND_TRUTH_FIELD,
};
use super::{Action, ActionKind, DialogueTurn, RenderedPrompts, Speaker, Termination, Transcript};
use crate::backend::{AgentBackend, BackendError, ChatMessage};
use crate::case::{TriageCase, VitalName};
use crate::persona::{validate_persona, NursePersona, PatientPersona, PersonaViolation};
use crate::policy::TriagePolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineConfig {
    #[serde(default = "default_max_turns")]
    pub max_turns: usize,
    /// Re-prompts after a malformed nurse reply before aborting.
    #[serde(default = "default_max_reprompts")]
    pub max_reprompts: usize,
}

fn default_max_turns() -> usize {
    40
}

fn default_max_reprompts() -> usize {
    3
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            max_turns: default_max_turns(),
            max_reprompts: default_max_reprompts(),
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("case {0} has no triage scale assigned")]
    UnscaledCase(String),
    #[error("policy scale {policy} does not match case scale {case}")]
    ScaleMismatch {
        policy: crate::case::Scale,
        case: crate::case::Scale,
    },
    #[error("patient persona is invalid for this case: {0:?}")]
    InvalidPersona(Vec<PersonaViolation>),
    #[error("conversation aborted: {reason}")]
    Aborted { reason: String, partial: Box<Transcript> },
}

pub struct ConversationInputs<'a> {
    pub conversation_id: &'a str,
    pub case: &'a TriageCase,
    pub nurse: &'a NursePersona,
    pub patient: &'a PatientPersona,
    pub policy: &'a TriagePolicy,
}

pub struct Agents<'a> {
    pub nurse: &'a dyn AgentBackend,
    pub patient: &'a dyn AgentBackend,
}

/// What each agent was shown before producing a given turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextAuditEntry {
    pub turn_index: usize,
    pub speaker: Speaker,
    pub served_vitals: Vec<VitalName>,
    pub mentions_ground_truth_field: bool,
}

#[derive(Debug, Clone)]
pub struct ConversationRun {
    pub transcript: Transcript,
    pub audit: Vec<ContextAuditEntry>,
}

enum NurseStep {
    Turn(DialogueTurn),
    Abort(String),
}

/// Runs one conversation until the nurse triages or `max_turns` turns exist.
pub fn run_conversation(
    inputs: ConversationInputs<'_>,
    agents: Agents<'_>,
    config: &EngineConfig,
) -> Result<ConversationRun, EngineError> {
    let ConversationInputs {
        conversation_id,
        case,
        nurse,
        patient,
        policy,
    } = inputs;
    let scale = case
        .scale
        .ok_or_else(|| EngineError::UnscaledCase(case.case_id.clone()))?;
    if policy.scale != scale {
        return Err(EngineError::ScaleMismatch {
            policy: policy.scale,
            case: scale,
        });
    }
    let violations = validate_persona(patient, case);
    if !violations.is_empty() {
        return Err(EngineError::InvalidPersona(violations));
    }

    let mut transcript = Transcript {
        conversation_id: conversation_id.to_string(),
        case_id: case.case_id.clone(),
        scale,
        nurse_persona: nurse.clone(),
        patient_persona: patient.clone(),
        generator_model_id: agents.nurse.model_id().to_string(),
        turns: Vec::new(),
        final_decision: None,
        final_decision_from_cap: false,
        termination: Termination::TurnCap,
        abort_reason: None,
        prompts: RenderedPrompts {
            nurse_system: nurse_system_prompt(policy, nurse),
            patient_system: patient_system_prompt(patient, case),
        },
    };
    let mut audit = Vec::new();
    let mut served = ServedVitals::new();

    let abort = |mut transcript: Transcript, reason: String| {
        transcript.termination = Termination::Aborted;
        transcript.abort_reason = Some(reason.clone());
        transcript.final_decision = last_decision(&transcript.turns);
        EngineError::Aborted {
            reason,
            partial: Box::new(transcript),
        }
    };

    while transcript.turns.len() < config.max_turns {
        let index = transcript.turns.len();
        let ctx = build_nurse_context(&transcript.turns, policy, nurse, &served);
        audit.push(ContextAuditEntry {
            turn_index: index,
            speaker: Speaker::Nurse,
            served_vitals: ctx.served_vitals.keys().copied().collect(),
            mentions_ground_truth_field: ctx.full_text().contains(GROUND_TRUTH_FIELD),
        });
        let turn = match nurse_step(agents.nurse, &ctx.system, ctx.history, index, config) {
            NurseStep::Turn(t) => t,
            NurseStep::Abort(reason) => return Err(abort(transcript, reason)),
        };
        debug!(conversation = conversation_id, index, action = ?turn.action, "nurse turn");
        let action = turn.action;
        let vital = turn.vital_name;
        transcript.turns.push(turn);

        match action {
            Action::Triage => {
                transcript.termination = Termination::Triaged;
                transcript.final_decision = last_decision(&transcript.turns);
                return Ok(ConversationRun { transcript, audit });
            }
            Action::RequestVital => {
                if transcript.turns.len() >= config.max_turns {
                    break;
                }
                let name = vital.expect("request_vital carries a vital name");
                let value = case.vitals.get(name);
                served.insert(name, value);
                transcript.turns.push(DialogueTurn {
                    index: transcript.turns.len(),
                    speaker: Speaker::Master,
                    action: Action::VitalResult,
                    utterance: Some(name.format_reading(value)),
                    vital_name: Some(name),
                    vital_value: value,
                    decision_log: None,
                });
            }
            Action::Speak => {
                if transcript.turns.len() >= config.max_turns {
                    break;
                }
                let index = transcript.turns.len();
                let ctx = build_patient_context(&transcript.turns, patient, case);
                audit.push(ContextAuditEntry {
                    turn_index: index,
                    speaker: Speaker::Patient,
                    served_vitals: Vec::new(),
                    mentions_ground_truth_field: ctx.full_text().contains(GROUND_TRUTH_FIELD),
                });
                let reply = match agents.patient.complete(&ctx.system, &ctx.history) {
                    Ok(r) if !r.trim().is_empty() => r.trim().to_string(),
                    Ok(_) => return Err(abort(transcript, BackendError::EmptyResponse.to_string())),
                    Err(e) => return Err(abort(transcript, format!("patient backend: {e}"))),
                };
                transcript.turns.push(DialogueTurn {
                    index,
                    speaker: Speaker::Patient,
                    action: Action::Speak,
                    utterance: Some(reply),
                    vital_name: None,
                    vital_value: None,
                    decision_log: None,
                });
            }
            Action::VitalResult => unreachable!("nurse actions never parse to vital_result"),
        }
    }

    transcript.termination = Termination::TurnCap;
    transcript.final_decision = last_decision(&transcript.turns);
    transcript.final_decision_from_cap = transcript.final_decision.is_some();
    Ok(ConversationRun { transcript, audit })
}

fn last_decision(turns: &[DialogueTurn]) -> Option<crate::policy::TriageDecision> {
    turns.iter().rev().find_map(|t| t.decision_log.clone())
}

fn nurse_step(
    backend: &dyn AgentBackend,
    system: &str,
    mut history: Vec<ChatMessage>,
    index: usize,
    config: &EngineConfig,
) -> NurseStep {
    for attempt in 0..=config.max_reprompts {
        let raw = match backend.complete(system, &history) {
            Ok(r) => r,
            Err(e) => return NurseStep::Abort(format!("nurse backend: {e}")),
        };
        match parse_nurse_action(&raw) {
            Ok(action) => {
                debug_assert!(matches!(
                    action.kind,
                    ActionKind::Speak | ActionKind::RequestVital | ActionKind::Triage
                ));
                return NurseStep::Turn(action.into_turn(index));
            }
            Err(e) if attempt < config.max_reprompts => {
                history.push(ChatMessage::assistant(raw));
                history.push(ChatMessage::user(format!(
                    "[Dialogue master] Your reply could not be used ({e}). \
                     Reply again with exactly one JSON object following the required format."
                )));
            }
            Err(e) => {
                return NurseStep::Abort(format!(
                    "malformed nurse action after {} re-prompts: {e}",
                    config.max_reprompts
                ))
            }
        }
    }
    unreachable!("loop returns on its final attempt")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ScriptedAgent;
    use crate::case::{Scale, Source, VitalSet};
    use crate::persona::SeededPersonaSampler;
    use crate::policy::load_policy;
    use crate::rng::seeded;

    fn case() -> TriageCase {
        TriageCase {
            case_id: "e1".into(),
            source: Source::Etek,
            chief_complaint: "fall from ladder".into(),
            vitals: VitalSet {
                heart_rate: Some(96.0),
                ..VitalSet::default()
            },
            pain_score: 6,
            ground_truth_acuity: 3,
            scale: Some(Scale::Ats),
            patient_demographics_hint: None,
        }
    }

    fn speak(acuity: u8) -> String {
        format!(
            r#"{{"action":"speak","utterance":"Tell me more.","decision_log":{{"acuity":{acuity},"confidence":0.5,"red_flags":[]}}}}"#
        )
    }

    fn triage() -> String {
        r#"{"action":"triage","utterance":"Category 3.","decision_log":{"acuity":3,"confidence":0.8,"red_flags":[]}}"#
            .into()
    }

    fn run(nurse: &ScriptedAgent, patient: &ScriptedAgent, max_turns: usize) -> Result<ConversationRun, EngineError> {
        let c = case();
        let policy = load_policy(Scale::Ats).unwrap();
        let sampler = SeededPersonaSampler::default();
        let np = sampler.sample_nurse(&mut seeded(1));
        let pp = sampler.sample_patient(&c, &mut seeded(2));
        run_conversation(
            ConversationInputs {
                conversation_id: "conv",
                case: &c,
                nurse: &np,
                patient: &pp,
                policy: &policy,
            },
            Agents { nurse, patient },
            &EngineConfig {
                max_turns,
                ..EngineConfig::default()
            },
        )
    }

    #[test]
    fn immediate_triage_is_one_turn() {
        let nurse = ScriptedAgent::new("n", vec![triage()]);
        let patient = ScriptedAgent::new("p", vec![]);
        let run = run(&nurse, &patient, 40).unwrap();
        let t = run.transcript;
        assert_eq!(t.turns.len(), 1);
        assert_eq!(t.termination, Termination::Triaged);
        assert_eq!(t.final_decision.as_ref().unwrap().acuity, 3);
        assert!(!t.final_decision_from_cap);
        assert!(t.check_invariants().is_empty());
    }

    #[test]
    fn speaking_nurse_hits_the_cap() {
        let nurse = ScriptedAgent::new("n", (1..=3).map(speak).collect());
        let patient = ScriptedAgent::new("p", vec!["Um, it hurts.".into(); 3]);
        let t = run(&nurse, &patient, 6).unwrap().transcript;
        assert_eq!(t.turns.len(), 6);
        assert_eq!(t.termination, Termination::TurnCap);
        let speakers: Vec<_> = t.turns.iter().map(|x| x.speaker).collect();
        assert_eq!(speakers, [Speaker::Nurse, Speaker::Patient].repeat(3));
        assert!(t.final_decision_from_cap);
        assert_eq!(t.final_decision.as_ref().unwrap().acuity, 3);
        assert_eq!(t.final_decision.as_ref().unwrap().turn_index, 4);
        assert!(t.check_invariants().is_empty());
    }

    #[test]
    fn vital_request_is_served_verbatim() {
        let req = r#"{"action":"request_vital","vital":"heart_rate","decision_log":{"acuity":3,"confidence":0.5}}"#;
        let req_missing =
            r#"{"action":"request_vital","vital":"temperature","decision_log":{"acuity":3,"confidence":0.5}}"#;
        let nurse = ScriptedAgent::new("n", vec![req.into(), req_missing.into(), triage()]);
        let patient = ScriptedAgent::new("p", vec![]);
        let run = run(&nurse, &patient, 40).unwrap();
        let t = &run.transcript;
        assert_eq!(t.turns[1].speaker, Speaker::Master);
        assert_eq!(t.turns[1].action, Action::VitalResult);
        assert_eq!(t.turns[1].vital_value, Some(96.0));
        assert_eq!(t.turns[3].vital_value, None);
        assert!(t.turns[3].utterance.as_deref().unwrap().contains("not available"));
        assert_eq!(run.audit[1].served_vitals, vec![VitalName::HeartRate]);
        assert!(t.check_invariants().is_empty());
        let calls = nurse.calls();
        assert!(!calls[0].system_prompt.contains("96"));
        assert!(calls[1].system_prompt.contains("Heart rate: 96"));
    }

    #[test]
    fn malformed_output_is_reprompted_then_aborted() {
        let nurse = ScriptedAgent::new("n", vec!["nope".into(), triage()]);
        let patient = ScriptedAgent::new("p", vec![]);
        let t = run(&nurse, &patient, 40).unwrap().transcript;
        assert_eq!(t.termination, Termination::Triaged);
        let calls = nurse.calls();
        assert!(calls[1].history.last().unwrap().content.contains("could not be used"));

        let nurse = ScriptedAgent::new("n", vec!["nope".into(); 4]);
        match run(&nurse, &patient, 40) {
            Err(EngineError::Aborted { partial, reason }) => {
                assert!(reason.contains("malformed"));
                assert_eq!(partial.termination, Termination::Aborted);
            }
            other => panic!("expected abort, got {other:?}"),
        }
    }

    #[test]
    fn backend_failure_aborts_with_partial() {
        let nurse = ScriptedAgent::new("n", vec![speak(3)]);
        let patient = ScriptedAgent::new("p", vec![]);
        match run(&nurse, &patient, 40) {
            Err(EngineError::Aborted { partial, .. }) => assert_eq!(partial.turns.len(), 1),
            other => panic!("expected abort, got {other:?}"),
        }
    }

    #[test]
    fn scale_mismatch_is_rejected() {
        let c = case();
        let policy = load_policy(Scale::Esi).unwrap();
        let sampler = SeededPersonaSampler::default();
        let np = sampler.sample_nurse(&mut seeded(1));
        let pp = sampler.sample_patient(&c, &mut seeded(2));
        let a = ScriptedAgent::new("n", vec![]);
        let err = run_conversation(
            ConversationInputs {
                conversation_id: "x",
                case: &c,
                nurse: &np,
                patient: &pp,
                policy: &policy,
            },
            Agents { nurse: &a, patient: &a },
            &EngineConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, EngineError::ScaleMismatch { .. }));
    }
}
