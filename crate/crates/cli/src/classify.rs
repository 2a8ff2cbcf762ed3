//! Conversational triage classification over transcripts, ASR output or
//! session audio, scored per scale with quadratic-weighted kappa.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use triagesim_core::backend::{AgentBackend, BackendError, ChatMessage, FnAgent};
use triagesim_core::dialogue::{Speaker, Transcript};
use triagesim_core::metrics::{quadratic_weighted_kappa, ConfusionMatrix};
use triagesim_core::persona::strip_code_fence;
use triagesim_core::{Scale, TriagePolicy};

use crate::config::Modality;

pub const CLASSIFY_TEMPLATE: &str = include_str!("../../../prompts/classify.txt");
pub const HEURISTIC_MODEL_ID: &str = "keyword-heuristic-v1";

/// One conversation to classify.
#[derive(Debug, Clone)]
pub struct ClassifyItem {
    pub conversation_id: String,
    pub scale: Scale,
    pub ground_truth: u8,
    pub input: ClassifyInput,
}

#[derive(Debug, Clone)]
pub enum ClassifyInput {
    Text(String),
    Wav(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleResult {
    pub scale: Scale,
    pub n: usize,
    pub matrix: ConfusionMatrix,
    pub kappa: Option<f64>,
    #[serde(default)]
    pub kappa_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationRun {
    pub model_id: String,
    pub modality: Modality,
    pub per_scale: Vec<ScaleResult>,
    /// `conversation_id: error` for items that produced no label.
    pub failures: Vec<String>,
}

/// Speaker-labelled rendering of the spoken turns.
pub fn render_dialogue<'a>(lines: impl IntoIterator<Item = (Speaker, &'a str)>) -> String {
    let mut out = String::new();
    for (speaker, text) in lines {
        let label = match speaker {
            Speaker::Nurse => "Nurse",
            Speaker::Patient => "Patient",
            Speaker::Master => "System",
        };
        out.push_str(label);
        out.push_str(": ");
        out.push_str(text.trim());
        out.push('\n');
    }
    out
}

pub fn transcript_text(t: &Transcript) -> String {
    render_dialogue(
        t.spoken_turns()
            .map(|turn| (turn.speaker, turn.utterance.as_deref().unwrap_or_default())),
    )
}

pub fn classification_prompt(policy: &TriagePolicy) -> String {
    CLASSIFY_TEMPLATE
        .replace("{policy}", policy.prompt_text.trim())
        .replace("{scale}", policy.scale.as_str())
}

static LEVEL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(?:level|acuity|category)\D{0,12}?([1-5])\b").expect("regex"));

/// Accepts `{"acuity": n}`, a bare number, or a reply naming the level in prose.
pub fn parse_acuity(reply: &str) -> Result<u8, String> {
    let body = strip_code_fence(reply).trim();
    if let Ok(v) = serde_json::from_str::<serde_json::Value>(body) {
        let level = if v.is_number() {
            v.as_u64()
        } else {
            v.get("acuity").and_then(serde_json::Value::as_u64)
        };
        return match level {
            Some(a @ 1..=5) => Ok(a as u8),
            Some(a) => Err(format!("acuity {a} outside 1..=5")),
            None => Err("JSON reply has no integer `acuity`".into()),
        };
    }
    LEVEL
        .captures(body)
        .map(|c| c[1].parse().expect("single digit"))
        .ok_or_else(|| format!("no acuity level in reply {body:?}"))
}

fn classify_one(item: &ClassifyItem, backend: &dyn AgentBackend, policy: &TriagePolicy) -> Result<u8, String> {
    let system = classification_prompt(policy);
    let reply = match &item.input {
        ClassifyInput::Text(text) => backend.complete(&system, &[ChatMessage::user(text.clone())]),
        ClassifyInput::Wav(wav) => backend.complete_with_audio(
            &system,
            "Classify the triage acuity of the conversation in this recording.",
            wav,
        ),
    }
    .map_err(|e| e.to_string())?;
    parse_acuity(&reply)
}

/// Classifies every item and builds one confusion matrix per scale (rows are
/// ground truth, columns predictions). Scales are never pooled.
pub fn classify_corpus(
    items: &[ClassifyItem],
    backend: &dyn AgentBackend,
    modality: Modality,
    policies: &BTreeMap<Scale, TriagePolicy>,
) -> ClassificationRun {
    let labels: Vec<Result<u8, String>> = items
        .par_iter()
        .map(|item| match policies.get(&item.scale) {
            Some(p) => classify_one(item, backend, p),
            None => Err(format!("no policy loaded for {}", item.scale)),
        })
        .collect();
    let mut matrices: BTreeMap<Scale, ConfusionMatrix> = BTreeMap::new();
    let mut failures = Vec::new();
    for (item, label) in items.iter().zip(labels) {
        let result = label.and_then(|pred| {
            matrices
                .entry(item.scale)
                .or_insert_with(|| ConfusionMatrix::new(5))
                .add(item.ground_truth, pred)
                .map_err(|e| e.to_string())
        });
        if let Err(e) = result {
            failures.push(format!("{}: {e}", item.conversation_id));
        }
    }
    let per_scale = matrices
        .into_iter()
        .map(|(scale, matrix)| {
            let (kappa, kappa_error) = match quadratic_weighted_kappa(&matrix) {
                Ok(k) => (Some(k), None),
                Err(e) => (None, Some(e.to_string())),
            };
            ScaleResult {
                scale,
                n: matrix.total() as usize,
                matrix,
                kappa,
                kappa_error,
            }
        })
        .collect();
    ClassificationRun {
        model_id: backend.model_id().to_string(),
        modality,
        per_scale,
        failures,
    }
}

/// Rows are models; columns are scale x modality.
pub fn render_kappa_table(runs: &[ClassificationRun]) -> String {
    let mut columns: Vec<(Scale, Modality)> = runs
        .iter()
        .flat_map(|r| r.per_scale.iter().map(move |s| (s.scale, r.modality)))
        .collect();
    columns.sort();
    columns.dedup();
    let mut models: Vec<&str> = runs.iter().map(|r| r.model_id.as_str()).collect();
    models.sort();
    models.dedup();
    let width = models.iter().map(|m| m.len()).max().unwrap_or(5).max(5);
    let mut out = format!("{:<width$}", "Model");
    for (scale, modality) in &columns {
        out.push_str(&format!("{:>11}", format!("{scale}-{}", modality.label())));
    }
    out.push('\n');
    for model in models {
        out.push_str(&format!("{model:<width$}"));
        for (scale, modality) in &columns {
            let cell = runs
                .iter()
                .filter(|r| r.model_id == model && r.modality == *modality)
                .flat_map(|r| &r.per_scale)
                .find(|s| s.scale == *scale)
                .map_or_else(
                    || "-".to_string(),
                    |s| s.kappa.map_or_else(|| "undef".into(), |k| format!("{k:.3}")),
                );
            out.push_str(&format!("{cell:>11}"));
        }
        out.push('\n');
    }
    out
}

/// Offline classifier: a red-flag keyword match gives level 2, otherwise the
/// stated pain score decides (7+ gives 3, 4-6 gives 4, lower gives 5).
pub fn heuristic_classifier() -> FnAgent {
    FnAgent::new("keyword-heuristic", |_system, history| {
        let text = history
            .last()
            .map(|m| m.content.to_lowercase())
            .ok_or(BackendError::EmptyResponse)?;
        Ok(format!("{{\"acuity\": {}}}", heuristic_level(&text)))
    })
    .with_model_id(HEURISTIC_MODEL_ID)
}

const URGENT_WORDS: [&str; 6] = ["chest", "breath", "weakness", "slurred", "confus", "unconscious"];
const PAIN_WORDS: [&str; 11] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
];

fn heuristic_level(text: &str) -> u8 {
    if URGENT_WORDS.iter().any(|w| text.contains(w)) {
        return 2;
    }
    let pain = PAIN_WORDS
        .iter()
        .position(|w| text.contains(&format!("{w} out of ten")))
        .unwrap_or(0);
    match pain {
        7.. => 3,
        4..=6 => 4,
        _ => 5,
    }
}
