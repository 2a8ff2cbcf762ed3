//! Turn-by-turn nurse/patient simulation coordinated by a deterministic
//! dialogue master.
//!
//! The master holds the full case. The nurse sees the policy, its persona, the
//! dialogue so far and only those vitals it explicitly requested; the patient
//! sees its persona, chief complaint and pain score, never vitals or acuity.

mod action;
mod audit;
mod context;
mod engine;

use serde::{Deserialize, Serialize};

use crate::case::{Scale, VitalName};
use crate::persona::{NursePersona, PatientPersona};
pub use crate::policy::TriageDecision;

pub use action::{parse_nurse_action, ActionKind, ActionParseError, NurseAction};
pub use audit::{audit_information_hiding, HidingViolation};
pub use context::{build_nurse_context, build_patient_context, ContextPayload, ServedVitals, GROUND_TRUTH_FIELD};
pub use engine::{
    run_conversation, Agents, ContextAuditEntry, ConversationInputs, ConversationRun, EngineConfig, EngineError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Nurse,
    Patient,
    Master,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Speak,
    RequestVital,
    Triage,
    VitalResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub index: usize,
    pub speaker: Speaker,
    pub action: Action,
    pub utterance: Option<String>,
    pub vital_name: Option<VitalName>,
    pub vital_value: Option<f64>,
    /// Present on every nurse turn.
    pub decision_log: Option<TriageDecision>,
}

impl DialogueTurn {
    /// Spoken turns are the ones that become audio: nurse/patient speak and triage.
    pub fn is_spoken(&self) -> bool {
        self.speaker != Speaker::Master
            && matches!(self.action, Action::Speak | Action::Triage)
            && self.utterance.as_deref().is_some_and(|u| !u.trim().is_empty())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Triaged,
    TurnCap,
    /// Backend failure or persistently malformed output; the transcript is partial.
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompts {
    pub nurse_system: String,
    pub patient_system: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub conversation_id: String,
    pub case_id: String,
    pub scale: Scale,
    pub nurse_persona: NursePersona,
    pub patient_persona: PatientPersona,
    pub generator_model_id: String,
    pub turns: Vec<DialogueTurn>,
    pub final_decision: Option<TriageDecision>,
    /// Set when the turn cap was hit and `final_decision` is the last logged one.
    pub final_decision_from_cap: bool,
    pub termination: Termination,
    #[serde(default)]
    pub abort_reason: Option<String>,
    pub prompts: RenderedPrompts,
}

impl Transcript {
    pub fn spoken_turns(&self) -> impl Iterator<Item = &DialogueTurn> {
        self.turns.iter().filter(|t| t.is_spoken())
    }

    pub fn vital_requests(&self) -> usize {
        self.turns.iter().filter(|t| t.action == Action::RequestVital).count()
    }

    /// Checks the structural invariants; returns a description per violation.
    pub fn check_invariants(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, t) in self.turns.iter().enumerate() {
            if t.index != i {
                out.push(format!("turn {i} has index {}", t.index));
            }
            let has_text = t.utterance.as_deref().is_some_and(|u| !u.trim().is_empty());
            match t.action {
                Action::Speak | Action::Triage if !has_text => {
                    out.push(format!("turn {i}: {:?} without utterance", t.action))
                }
                Action::RequestVital if t.vital_name.is_none() => {
                    out.push(format!("turn {i}: request_vital without vital_name"))
                }
                Action::VitalResult => {
                    if t.speaker != Speaker::Master {
                        out.push(format!("turn {i}: vital_result not from master"));
                    }
                    let prev = i.checked_sub(1).and_then(|p| self.turns.get(p));
                    let follows_request =
                        prev.is_some_and(|p| p.action == Action::RequestVital && p.vital_name == t.vital_name);
                    if !follows_request {
                        out.push(format!("turn {i}: vital_result without a preceding request"));
                    }
                }
                _ => {}
            }
            if t.speaker == Speaker::Nurse && t.decision_log.is_none() {
                out.push(format!("turn {i}: nurse turn without decision_log"));
            }
            if t.speaker != Speaker::Nurse && t.decision_log.is_some() {
                out.push(format!("turn {i}: decision_log on a non-nurse turn"));
            }
            if t.speaker == Speaker::Master && t.action != Action::VitalResult {
                out.push(format!("turn {i}: master may only emit vital_result"));
            }
        }
        let triage: Vec<_> = self.turns.iter().filter(|t| t.action == Action::Triage).collect();
        if triage.len() > 1 {
            out.push("more than one triage action".into());
        }
        if self.termination == Termination::Triaged {
            match triage.first() {
                Some(t) => {
                    if t.index + 1 != self.turns.len() {
                        out.push("triage turn is not the final turn".into());
                    }
                    if self.final_decision != t.decision_log {
                        out.push("final_decision differs from the triage decision_log".into());
                    }
                }
                None => out.push("termination=triaged without a triage turn".into()),
            }
        }
        out
    }
}
