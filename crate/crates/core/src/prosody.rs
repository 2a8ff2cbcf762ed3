//! Phrase-break annotation for TTS.
//!
//! Two break classes are used: `<ip>` (intonation phrase) and `<sb>` (sentence
//! break). Literal `&`, `<` and `>` in the source text are escaped in the
//! annotated form so that [`strip_breaks`] is an exact inverse.

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::backend::{AgentBackend, ChatMessage};
use crate::dialogue::{Speaker, Transcript};
use crate::persona::{strip_code_fence, PatientPersona};

pub const IP: &str = "<ip>";
pub const SB: &str = "<sb>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Break {
    Ip,
    Sb,
}

impl Break {
    pub fn token(self) -> &'static str {
        match self {
            Break::Ip => IP,
            Break::Sb => SB,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationMethod {
    RuleBased,
    Backend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedUtterance {
    pub original: String,
    pub annotated: String,
    pub role: Speaker,
    /// Patient utterances only.
    pub persona: Option<PatientPersona>,
    pub method: AnnotationMethod,
    /// Set when a backend was asked but its output was unusable.
    pub fallback_used: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedTurn {
    pub turn_index: usize,
    #[serde(flatten)]
    pub utterance: AnnotatedUtterance,
}

/// Whitespace normalization: trim and collapse runs to one space.
pub fn normalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn escape(word: &str) -> String {
    word.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn unescape(word: &str) -> String {
    word.replace("&lt;", "<").replace("&gt;", ">").replace("&amp;", "&")
}

/// Removes break tokens and restores escaped characters.
pub fn strip_breaks(annotated: &str) -> String {
    annotated
        .split_whitespace()
        .filter(|w| *w != IP && *w != SB)
        .map(unescape)
        .collect::<Vec<_>>()
        .join(" ")
}

/// A word followed by an optional break.
type Slot = (String, Option<Break>);

/// Merges adjacent breaks (`<sb>` wins) and drops leading/trailing ones.
fn canonical(items: Vec<Result<String, Break>>) -> Vec<Slot> {
    let mut out: Vec<Slot> = Vec::new();
    for item in items {
        match item {
            Ok(word) => out.push((word, None)),
            Err(b) => {
                if let Some(last) = out.last_mut() {
                    last.1 = Some(last.1.map_or(b, |prev| prev.max(b)));
                }
            }
        }
    }
    if let Some(last) = out.last_mut() {
        last.1 = None;
    }
    out
}

fn render(slots: &[Slot]) -> String {
    let mut parts = Vec::with_capacity(slots.len() * 2);
    for (word, brk) in slots {
        parts.push(escape(word));
        if let Some(b) = brk {
            parts.push(b.token().to_string());
        }
    }
    parts.join(" ")
}

fn rule_break(word: &str) -> Option<Break> {
    let core = word.trim_end_matches(['"', '\'', ')', ']', '\u{201d}', '\u{2019}']);
    match core.chars().last()? {
        '.' | '!' | '?' => Some(Break::Sb),
        ',' | ';' | ':' => Some(Break::Ip),
        _ => None,
    }
}

/// Deterministic annotation: sentence punctuation gives `<sb>`, clause
/// punctuation gives `<ip>`.
pub fn annotate_rule_based(text: &str) -> String {
    let items = text
        .split_whitespace()
        .flat_map(|w| {
            let mut v = vec![Ok(w.to_string())];
            if let Some(b) = rule_break(w) {
                v.push(Err(b));
            }
            v
        })
        .collect();
    render(&canonical(items))
}

/// Parses free-form backend output into words and breaks. Break tokens may be
/// glued to words.
fn parse_backend_output(raw: &str) -> Vec<Result<String, Break>> {
    let mut items = Vec::new();
    for chunk in raw.split_whitespace() {
        let mut rest = chunk;
        while !rest.is_empty() {
            let next = [(IP, Break::Ip), (SB, Break::Sb)]
                .iter()
                .filter_map(|(tok, b)| rest.find(tok).map(|pos| (pos, *tok, *b)))
                .min_by_key(|(pos, _, _)| *pos);
            match next {
                Some((pos, tok, b)) => {
                    if pos > 0 {
                        items.push(Ok(rest[..pos].to_string()));
                    }
                    items.push(Err(b));
                    rest = &rest[pos + tok.len()..];
                }
                None => {
                    items.push(Ok(rest.to_string()));
                    rest = "";
                }
            }
        }
    }
    items
}

const ANNOTATION_INSTRUCTIONS: &str = "\
You add prosodic phrase-break markers to one utterance for a speech synthesizer.
Insert <ip> at intonation-phrase boundaries and <sb> at sentence boundaries.
Do not change, add, remove or reorder any words or punctuation.
Never put two markers next to each other, and never end with a marker.
Reply with the annotated utterance only.";

fn annotation_prompt(role: Speaker, persona: Option<&PatientPersona>) -> String {
    let mut system = ANNOTATION_INSTRUCTIONS.to_string();
    match (role, persona) {
        (Speaker::Patient, Some(p)) => system.push_str(&format!(
            "\nThe speaker is a patient ({}). Higher disfluency and topic drift \
             usually mean shorter phrases and more <ip> breaks.",
            p.describe()
        )),
        (Speaker::Nurse, _) => system.push_str("\nThe speaker is a triage nurse."),
        _ => {}
    }
    system
}

fn try_backend(
    backend: &dyn AgentBackend,
    text: &str,
    role: Speaker,
    persona: Option<&PatientPersona>,
) -> Result<String, String> {
    let system = annotation_prompt(role, persona);
    let reply = backend
        .complete(&system, &[ChatMessage::user(text)])
        .map_err(|e| e.to_string())?;
    let slots = canonical(parse_backend_output(strip_code_fence(&reply)));
    let words: Vec<&str> = slots.iter().map(|(w, _)| w.as_str()).collect();
    if words != text.split_whitespace().collect::<Vec<_>>() {
        return Err("backend altered the words".into());
    }
    Ok(render(&slots))
}

/// Annotates one utterance. Never fails: without a backend, or when the
/// backend output is unusable, the rule-based annotation is returned.
pub fn annotate_utterance(
    utterance: &str,
    role: Speaker,
    persona: Option<&PatientPersona>,
    backend: Option<&dyn AgentBackend>,
) -> AnnotatedUtterance {
    let original = normalize(utterance);
    let persona = if role == Speaker::Patient {
        persona.cloned()
    } else {
        None
    };
    let (annotated, method, fallback_used) = match backend {
        Some(b) => match try_backend(b, &original, role, persona.as_ref()) {
            Ok(a) => (a, AnnotationMethod::Backend, false),
            Err(reason) => {
                warn!(%reason, "break annotation fell back to rules");
                (annotate_rule_based(&original), AnnotationMethod::RuleBased, true)
            }
        },
        None => (annotate_rule_based(&original), AnnotationMethod::RuleBased, false),
    };
    AnnotatedUtterance {
        original,
        annotated,
        role,
        persona,
        method,
        fallback_used,
    }
}

/// Annotates every spoken turn of a transcript.
pub fn annotate_transcript(transcript: &Transcript, backend: Option<&dyn AgentBackend>) -> Vec<AnnotatedTurn> {
    transcript
        .spoken_turns()
        .map(|t| AnnotatedTurn {
            turn_index: t.index,
            utterance: annotate_utterance(
                t.utterance.as_deref().unwrap_or_default(),
                t.speaker,
                Some(&transcript.patient_persona),
                backend,
            ),
        })
        .collect()
}

/// Structural invariants of an annotated string; returns one message per problem.
pub fn check_annotation(original: &str, annotated: &str) -> Vec<String> {
    let mut out = Vec::new();
    if strip_breaks(annotated) != normalize(original) {
        out.push("stripped text differs from the original".into());
    }
    let toks: Vec<&str> = annotated.split_whitespace().collect();
    let is_break = |t: &&str| *t == IP || *t == SB;
    if toks.first().is_some_and(is_break) {
        out.push("leading break".into());
    }
    if toks.last().is_some_and(is_break) {
        out.push("trailing break".into());
    }
    if toks.windows(2).any(|w| is_break(&w[0]) && is_break(&w[1])) {
        out.push("adjacent breaks".into());
    }
    out
}

/// Random break placement over the words of `text`, used to fuzz the
/// canonicalizer.
pub fn random_backend_output<R: rand::Rng + ?Sized>(text: &str, rng: &mut R) -> String {
    let mut parts = Vec::new();
    for w in text.split_whitespace() {
        if rng.random_bool(0.2) {
            parts.push(if rng.random_bool(0.5) { IP } else { SB }.to_string());
        }
        parts.push(w.to_string());
        for _ in 0..rng.random_range(0..3u8) {
            parts.push(if rng.random_bool(0.5) { IP } else { SB }.to_string());
        }
    }
    parts.join(" ")
}
