//! Persona-driven canned scripts for offline runs.
//!
//! These build [`ScriptedAgent`](super::ScriptedAgent) responses that follow
//! the nurse action contract and realise persona attributes in a simple,
//! measurable way: guideline adherence sets the number of vital requests, risk
//! tolerance biases the final level, experience sets confidence, and the
//! patient's disfluency level sets the density of fillers and repetitions.
//! The scripts are test oracles, so they may read the case directly; the
//! information-hiding rules apply to the contexts the engine builds.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde_json::json;

use super::ScriptedAgent;
use crate::case::{TriageCase, VitalName};
use crate::persona::{ExperienceLevel, GuidelineAdherence, NursePersona, PatientPersona, RiskTolerance};

pub const SIMULATED_MODEL_ID: &str = "simulated-script-v1";

const QUESTIONS: [&str; 4] = [
    "Hello, I'm the triage nurse. What brings you in today?",
    "When did this start?",
    "How bad is the pain right now, from zero to ten?",
    "Do you have any medical conditions or take any regular medication?",
];

const VITAL_ORDER: [VitalName; 5] = [
    VitalName::HeartRate,
    VitalName::O2Saturation,
    VitalName::RespiratoryRate,
    VitalName::Temperature,
    VitalName::SystolicBp,
];

pub fn vital_requests_for(adherence: GuidelineAdherence) -> usize {
    match adherence {
        GuidelineAdherence::Strict => 3,
        GuidelineAdherence::Moderate => 2,
        GuidelineAdherence::Loose => 1,
    }
}

fn base_confidence(level: ExperienceLevel) -> f64 {
    match level {
        ExperienceLevel::Novice => 0.55,
        ExperienceLevel::Intermediate => 0.7,
        ExperienceLevel::Expert => 0.85,
    }
}

/// Probability of assigning one level more urgent / less urgent than truth.
fn triage_bias(risk: RiskTolerance) -> (f64, f64) {
    match risk {
        RiskTolerance::Low => (0.4, 0.05),
        RiskTolerance::Medium => (0.2, 0.1),
        RiskTolerance::High => (0.1, 0.2),
    }
}

fn complaint_flags(case: &TriageCase) -> Vec<String> {
    let complaint = case.chief_complaint.to_lowercase();
    let mut flags = Vec::new();
    if complaint.contains("chest") {
        flags.push("cardiac_chest_pain".to_string());
    }
    if complaint.contains("weakness") || complaint.contains("slurred") || complaint.contains("droop") {
        flags.push("stroke_symptoms".to_string());
    }
    if complaint.contains("confus") {
        flags.push("altered_mental_status".to_string());
    }
    if case.pain_score >= 7 {
        flags.push("severe_pain".to_string());
    }
    flags
}

/// Number of nurse `speak` actions in the script (each gets one patient reply).
pub fn nurse_question_count() -> usize {
    QUESTIONS.len()
}

/// Canned nurse actions for one conversation.
pub fn nurse_script<R: Rng + ?Sized>(case: &TriageCase, nurse: &NursePersona, rng: &mut R) -> Vec<String> {
    let n_vitals = vital_requests_for(nurse.guideline_adherence);
    let (p_over, p_under) = triage_bias(nurse.risk_tolerance);
    let draw: f64 = rng.random();
    let shift: i16 = if draw < p_over {
        -1
    } else if draw < p_over + p_under {
        1
    } else {
        0
    };
    let final_acuity = (i16::from(case.ground_truth_acuity) + shift).clamp(1, 5) as u8;
    let confidence = (base_confidence(nurse.experience_level) + rng.random_range(-0.05..=0.05)).clamp(0.0, 1.0);
    let confidence = (confidence * 100.0).round() / 100.0;
    let flags = complaint_flags(case);

    let log = |acuity: u8, confidence: f64, flags: &[String]| json!({"acuity": acuity, "confidence": confidence, "red_flags": flags});
    let provisional = 3u8;
    let mut actions = Vec::new();
    for i in 0..QUESTIONS.len().max(n_vitals) {
        let progress = (i + 1) as f64 / (QUESTIONS.len() + 1) as f64;
        let conf = ((confidence * progress) * 100.0).round() / 100.0;
        let cited: &[String] = if i == 0 { &[] } else { &flags };
        if let Some(q) = QUESTIONS.get(i) {
            actions.push(
                json!({"action": "speak", "utterance": q, "decision_log": log(provisional, conf, cited)}).to_string(),
            );
        }
        if i < n_vitals {
            let vital = VITAL_ORDER[i % VITAL_ORDER.len()];
            actions.push(
                json!({"action": "request_vital", "vital": vital.as_str(),
                       "utterance": format!("I'm just going to check your {}.", vital.label().to_lowercase()),
                       "decision_log": log(provisional, conf, cited)})
                .to_string(),
            );
        }
    }
    let closing = match final_acuity {
        1 | 2 => "Thank you. We need to see you straight away, please come with me.",
        3 => "Thank you. You'll be seen soon, please stay in the waiting area.",
        _ => "Thank you. Please take a seat and a doctor will see you when available.",
    };
    actions.push(
        json!({"action": "triage", "utterance": closing, "decision_log": log(final_acuity, confidence, &flags)})
            .to_string(),
    );
    actions
}

fn number_word(n: u8) -> &'static str {
    [
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    ]
    .get(usize::from(n))
    .copied()
    .unwrap_or("ten")
}

const FILLERS: [&str; 3] = ["um", "uh", "erm"];

/// Inserts fillers and repetitions with a density proportional to `level` (0-4).
pub fn disfluent<R: Rng + ?Sized>(text: &str, level: u8, rng: &mut R) -> String {
    let p = f64::from(level.min(4)) * 0.12;
    let mut out: Vec<String> = Vec::new();
    for word in text.split_whitespace() {
        if rng.random_bool(p) {
            out.push(format!("{},", FILLERS.choose(rng).expect("fillers")));
        }
        if rng.random_bool(p / 2.0) {
            let bare = word.trim_end_matches(|c: char| c.is_ascii_punctuation());
            if !bare.is_empty() {
                out.push(format!("{bare},"));
            }
        }
        out.push(word.to_string());
    }
    out.join(" ")
}

/// Canned patient replies, one per nurse question.
pub fn patient_script<R: Rng + ?Sized>(case: &TriageCase, patient: &PatientPersona, rng: &mut R) -> Vec<String> {
    let onset = ["a few hours ago", "this morning", "two days ago", "about an hour ago"]
        .choose(rng)
        .expect("onsets");
    let history = [
        "No, nothing like this before.",
        "I take tablets for my blood pressure.",
        "I have asthma but it has been fine.",
        "Not really, I am usually healthy.",
    ]
    .choose(rng)
    .expect("histories");
    let complaint = case.chief_complaint.trim().trim_end_matches('.');
    let base = [
        format!("I have {complaint}."),
        format!("It started {onset}."),
        format!("It is about {} out of ten.", number_word(case.pain_score)),
        history.to_string(),
    ];
    base.iter()
        .map(|u| disfluent(u, patient.disfluency_rate, rng))
        .collect()
}

/// Ready-made scripted nurse and patient agents for one conversation.
pub fn scripted_pair<R: Rng + ?Sized>(
    case: &TriageCase,
    nurse: &NursePersona,
    patient: &PatientPersona,
    rng: &mut R,
) -> (ScriptedAgent, ScriptedAgent) {
    let nurse_agent =
        ScriptedAgent::new("simulated-nurse", nurse_script(case, nurse, rng)).with_model_id(SIMULATED_MODEL_ID);
    let patient_agent =
        ScriptedAgent::new("simulated-patient", patient_script(case, patient, rng)).with_model_id(SIMULATED_MODEL_ID);
    (nurse_agent, patient_agent)
}
