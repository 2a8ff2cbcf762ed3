//! Structured-output contract for the nurse's four-action space.
//!
//! ```json
//! {"action": "speak" | "request_vital" | "triage",
//!  "utterance": "...",              // required for speak and triage
//!  "vital": "heart_rate",           // required for request_vital
//!  "decision_log": {"acuity": 1-5, "confidence": 0.0-1.0, "red_flags": ["id", ...]}}
//! ```

use std::str::FromStr;

use serde::Serialize;
use serde_json::{Map, Value};
use thiserror::Error;

use super::{Action, DialogueTurn, Speaker, TriageDecision};
use crate::case::VitalName;
use crate::persona::strip_code_fence;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ActionParseError {
    #[error("reply is not a JSON object: {0}")]
    InvalidJson(String),
    #[error("missing field: {0}")]
    MissingField(&'static str),
    #[error("field {0} has the wrong type")]
    WrongType(&'static str),
    #[error("unknown action `{0}` (expected speak, request_vital or triage)")]
    UnknownAction(String),
    #[error("unknown vital `{0}`")]
    UnknownVital(String),
    #[error("confidence range: {0} is outside [0, 1]")]
    ConfidenceRange(f64),
    #[error("acuity range: {0} is outside 1..=5")]
    AcuityRange(f64),
}

impl ActionParseError {
    /// Name of the offending field.
    pub fn field(&self) -> &'static str {
        match self {
            ActionParseError::InvalidJson(_) => "json",
            ActionParseError::MissingField(f) | ActionParseError::WrongType(f) => f,
            ActionParseError::UnknownAction(_) => "action",
            ActionParseError::UnknownVital(_) => "vital",
            ActionParseError::ConfidenceRange(_) => "confidence",
            ActionParseError::AcuityRange(_) => "acuity",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Speak,
    RequestVital,
    Triage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NurseAction {
    pub kind: ActionKind,
    pub utterance: Option<String>,
    pub vital: Option<VitalName>,
    pub acuity: u8,
    pub confidence: f64,
    pub red_flags: Vec<String>,
}

impl NurseAction {
    pub fn into_turn(self, index: usize) -> DialogueTurn {
        let action = match self.kind {
            ActionKind::Speak => Action::Speak,
            ActionKind::RequestVital => Action::RequestVital,
            ActionKind::Triage => Action::Triage,
        };
        DialogueTurn {
            index,
            speaker: Speaker::Nurse,
            action,
            utterance: self.utterance,
            vital_name: self.vital,
            vital_value: None,
            decision_log: Some(TriageDecision {
                acuity: self.acuity,
                confidence: self.confidence,
                red_flags_cited: self.red_flags,
                turn_index: index,
            }),
        }
    }
}

/// Canonical JSON for a nurse turn, as replayed in the nurse's own history.
pub(crate) fn action_json(turn: &DialogueTurn) -> String {
    let mut obj = Map::new();
    let action = match turn.action {
        Action::Speak => "speak",
        Action::RequestVital => "request_vital",
        Action::Triage => "triage",
        Action::VitalResult => "vital_result",
    };
    obj.insert("action".into(), action.into());
    if let Some(u) = &turn.utterance {
        obj.insert("utterance".into(), u.clone().into());
    }
    if let Some(v) = turn.vital_name {
        obj.insert("vital".into(), v.as_str().into());
    }
    if let Some(d) = &turn.decision_log {
        obj.insert(
            "decision_log".into(),
            serde_json::json!({
                "acuity": d.acuity,
                "confidence": d.confidence,
                "red_flags": d.red_flags_cited,
            }),
        );
    }
    Value::Object(obj).to_string()
}

fn extract_object(raw: &str) -> Result<Map<String, Value>, ActionParseError> {
    let trimmed = strip_code_fence(raw);
    let candidate = match serde_json::from_str::<Value>(trimmed) {
        Ok(v) => v,
        Err(first) => {
            // Tolerate prose around a single object.
            let (Some(start), Some(end)) = (trimmed.find('{'), trimmed.rfind('}')) else {
                return Err(ActionParseError::InvalidJson(first.to_string()));
            };
            serde_json::from_str(&trimmed[start..=end]).map_err(|e| ActionParseError::InvalidJson(e.to_string()))?
        }
    };
    match candidate {
        Value::Object(m) => Ok(m),
        other => Err(ActionParseError::InvalidJson(format!(
            "expected an object, got {other}"
        ))),
    }
}

fn text_field(obj: &Map<String, Value>, name: &'static str) -> Result<Option<String>, ActionParseError> {
    match obj.get(name) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) if s.trim().is_empty() => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.trim().to_string())),
        Some(_) => Err(ActionParseError::WrongType(name)),
    }
}

/// Parses a raw backend reply into a nurse action.
pub fn parse_nurse_action(raw: &str) -> Result<NurseAction, ActionParseError> {
    let obj = extract_object(raw)?;
    let kind = match obj.get("action") {
        None | Some(Value::Null) => return Err(ActionParseError::MissingField("action")),
        Some(Value::String(s)) => match s.trim().to_ascii_lowercase().as_str() {
            "speak" => ActionKind::Speak,
            "request_vital" => ActionKind::RequestVital,
            "triage" => ActionKind::Triage,
            other => return Err(ActionParseError::UnknownAction(other.to_string())),
        },
        Some(_) => return Err(ActionParseError::WrongType("action")),
    };
    let utterance = text_field(&obj, "utterance")?;
    let vital = match text_field(&obj, "vital")? {
        Some(v) => Some(VitalName::from_str(&v.to_ascii_lowercase()).map_err(ActionParseError::UnknownVital)?),
        None => None,
    };
    match kind {
        ActionKind::Speak | ActionKind::Triage if utterance.is_none() => {
            return Err(ActionParseError::MissingField("utterance"))
        }
        ActionKind::RequestVital if vital.is_none() => return Err(ActionParseError::MissingField("vital")),
        _ => {}
    }
    let log = match obj.get("decision_log") {
        None | Some(Value::Null) => return Err(ActionParseError::MissingField("decision_log")),
        Some(Value::Object(m)) => m,
        Some(_) => return Err(ActionParseError::WrongType("decision_log")),
    };
    let acuity = match log.get("acuity") {
        None | Some(Value::Null) => return Err(ActionParseError::MissingField("acuity")),
        Some(v) => v.as_f64().ok_or(ActionParseError::WrongType("acuity"))?,
    };
    if acuity.fract() != 0.0 || !(1.0..=5.0).contains(&acuity) {
        return Err(ActionParseError::AcuityRange(acuity));
    }
    let confidence = match log.get("confidence") {
        None | Some(Value::Null) => return Err(ActionParseError::MissingField("confidence")),
        Some(v) => v.as_f64().ok_or(ActionParseError::WrongType("confidence"))?,
    };
    if !(0.0..=1.0).contains(&confidence) {
        return Err(ActionParseError::ConfidenceRange(confidence));
    }
    let red_flags = match log.get("red_flags") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| {
                v.as_str()
                    .map(|s| s.trim().to_string())
                    .ok_or(ActionParseError::WrongType("red_flags"))
            })
            .collect::<Result<Vec<_>, _>>()?,
        Some(_) => return Err(ActionParseError::WrongType("red_flags")),
    };
    Ok(NurseAction {
        kind,
        utterance,
        vital,
        acuity: acuity as u8,
        confidence,
        red_flags,
    })
}
