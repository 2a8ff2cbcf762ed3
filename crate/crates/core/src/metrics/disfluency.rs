//! Rule-based disfluency detection with a versioned pattern inventory.

use std::collections::HashSet;
use std::ops::AddAssign;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::text::tokenize;
use super::MetricError;

pub const DEFAULT_PATTERNS_JSON: &str = include_str!("../../../../patterns/disfluency_v1.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepetitionRules {
    pub adjacent_words: bool,
    pub adjacent_bigrams: bool,
}

/// On-disk pattern inventory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisfluencyPatterns {
    pub version: String,
    pub filled_pauses: Vec<String>,
    pub repetition: RepetitionRules,
    pub substitution: Vec<String>,
    pub insertion: Vec<String>,
    pub speech_error: Vec<String>,
}

impl DisfluencyPatterns {
    pub fn from_json(json: &str) -> Result<Self, MetricError> {
        serde_json::from_str(json).map_err(|e| MetricError::Patterns(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisfluencyCounts {
    pub filled_pause: u64,
    pub repetition: u64,
    pub substitution: u64,
    pub insertion: u64,
    pub speech_error: u64,
    pub token_count: u64,
}

/// Occurrences per 100 tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisfluencyRates {
    pub filled_pause: f64,
    pub repetition: f64,
    pub substitution: f64,
    pub insertion: f64,
    pub speech_error: f64,
    pub total: f64,
}

impl DisfluencyCounts {
    pub fn total(&self) -> u64 {
        self.filled_pause + self.repetition + self.substitution + self.insertion + self.speech_error
    }

    pub fn rates(&self) -> Result<DisfluencyRates, MetricError> {
        if self.token_count == 0 {
            return Err(MetricError::NoTokens);
        }
        let t = self.token_count as f64;
        let rate = |c: u64| 100.0 * c as f64 / t;
        Ok(DisfluencyRates {
            filled_pause: rate(self.filled_pause),
            repetition: rate(self.repetition),
            substitution: rate(self.substitution),
            insertion: rate(self.insertion),
            speech_error: rate(self.speech_error),
            total: rate(self.total()),
        })
    }
}

impl AddAssign for DisfluencyCounts {
    fn add_assign(&mut self, o: Self) {
        self.filled_pause += o.filled_pause;
        self.repetition += o.repetition;
        self.substitution += o.substitution;
        self.insertion += o.insertion;
        self.speech_error += o.speech_error;
        self.token_count += o.token_count;
    }
}

/// Compiled pattern inventory.
#[derive(Debug, Clone)]
pub struct DisfluencyDetector {
    pub version: String,
    filled: HashSet<String>,
    rules: RepetitionRules,
    substitution: Vec<Regex>,
    insertion: Vec<Regex>,
    speech_error: Vec<Regex>,
}

fn compile(patterns: &[String]) -> Result<Vec<Regex>, MetricError> {
    patterns
        .iter()
        .map(|p| Regex::new(p).map_err(|e| MetricError::Patterns(format!("{p}: {e}"))))
        .collect()
}

static DEFAULT: LazyLock<DisfluencyDetector> = LazyLock::new(|| {
    let patterns = DisfluencyPatterns::from_json(DEFAULT_PATTERNS_JSON).expect("bundled patterns parse");
    DisfluencyDetector::new(&patterns).expect("bundled patterns compile")
});

impl DisfluencyDetector {
    pub fn new(patterns: &DisfluencyPatterns) -> Result<Self, MetricError> {
        Ok(Self {
            version: patterns.version.clone(),
            filled: patterns.filled_pauses.iter().map(|s| s.to_lowercase()).collect(),
            rules: patterns.repetition.clone(),
            substitution: compile(&patterns.substitution)?,
            insertion: compile(&patterns.insertion)?,
            speech_error: compile(&patterns.speech_error)?,
        })
    }

    pub fn bundled() -> &'static DisfluencyDetector {
        &DEFAULT
    }

    pub fn detect(&self, utterance: &str) -> DisfluencyCounts {
        let tokens = tokenize(utterance);
        let filled_pause = tokens.iter().filter(|t| self.filled.contains(*t)).count() as u64;
        let mut repetition = 0u64;
        if self.rules.adjacent_words {
            repetition += tokens
                .windows(2)
                .filter(|w| w[0] == w[1] && !self.filled.contains(&w[1]))
                .count() as u64;
        }
        if self.rules.adjacent_bigrams {
            let mut i = 3;
            while i < tokens.len() {
                if tokens[i - 1] != tokens[i] && tokens[i - 1..=i] == tokens[i - 3..=i - 2] {
                    repetition += 1;
                    i += 2;
                } else {
                    i += 1;
                }
            }
        }
        let text = tokens_text(utterance);
        let count = |res: &[Regex]| res.iter().map(|r| r.find_iter(&text).count() as u64).sum();
        DisfluencyCounts {
            filled_pause,
            repetition,
            substitution: count(&self.substitution),
            insertion: count(&self.insertion),
            speech_error: count(&self.speech_error),
            token_count: tokens.len() as u64,
        }
    }
}

/// Lowercased text with whitespace collapsed; punctuation kept for the regexes.
fn tokens_text(utterance: &str) -> String {
    utterance
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Counts with the bundled v1 inventory.
pub fn detect_disfluencies(utterance: &str) -> DisfluencyCounts {
    DisfluencyDetector::bundled().detect(utterance)
}

/// Sum of per-utterance counts; patterns never match across utterances.
pub fn detect_corpus<'a>(
    detector: &DisfluencyDetector,
    utterances: impl IntoIterator<Item = &'a str>,
) -> DisfluencyCounts {
    let mut total = DisfluencyCounts::default();
    for u in utterances {
        total += detector.detect(u);
    }
    total
}
