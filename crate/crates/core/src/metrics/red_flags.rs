//! Micro-averaged red-flag precision, recall and F1 over per-case id sets.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::MetricError;

/// Lowercase, trimmed, with runs of spaces, hyphens and underscores folded to `_`.
pub fn normalize_flag(flag: &str) -> String {
    flag.trim()
        .to_lowercase()
        .split(|c: char| c.is_whitespace() || c == '-' || c == '_')
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join("_")
}

fn flag_set(flags: &[String]) -> BTreeSet<String> {
    flags
        .iter()
        .map(|f| normalize_flag(f))
        .filter(|f| !f.is_empty())
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedFlagScores {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl RedFlagScores {
    pub fn precision(&self) -> Result<f64, MetricError> {
        match self.tp + self.fp {
            0 => Err(MetricError::NoPredictions),
            d => Ok(self.tp as f64 / d as f64),
        }
    }

    pub fn recall(&self) -> Result<f64, MetricError> {
        match self.tp + self.fn_ {
            0 => Err(MetricError::NoReferences),
            d => Ok(self.tp as f64 / d as f64),
        }
    }

    /// Harmonic mean; 0 when both precision and recall are 0.
    pub fn f1(&self) -> Result<f64, MetricError> {
        let (p, r) = (self.precision()?, self.recall()?);
        Ok(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) })
    }
}

/// Pools true/false positives and false negatives across cases.
pub fn red_flag_prf(predicted: &[Vec<String>], reference: &[Vec<String>]) -> Result<RedFlagScores, MetricError> {
    if predicted.len() != reference.len() {
        return Err(MetricError::LengthMismatch {
            left: predicted.len(),
            right: reference.len(),
        });
    }
    let mut s = RedFlagScores::default();
    for (p, r) in predicted.iter().zip(reference) {
        let (p, r) = (flag_set(p), flag_set(r));
        let tp = p.intersection(&r).count();
        s.tp += tp;
        s.fp += p.len() - tp;
        s.fn_ += r.len() - tp;
    }
    Ok(s)
}
