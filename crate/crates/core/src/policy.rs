//! ATS and ESI triage policies as structured data, plus decision scoring.
//!
//! Policies are versioned JSON assets (`policies/ats.json`, `policies/esi.json`).
//! Only their structure is validated; the clinical wording is reviewed by humans.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::case::Scale;
use crate::persona::GuidelineAdherence;

const ATS_JSON: &str = include_str!("../../../policies/ats.json");
const ESI_JSON: &str = include_str!("../../../policies/esi.json");

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("cannot read policy file {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed policy: {0}")]
    Malformed(String),
    #[error("policy describes {found} but {expected} was requested")]
    ScaleMismatch { expected: Scale, found: Scale },
    #[error("acuity {0} outside 1..=5")]
    AcuityOutOfRange(u8),
    #[error("cannot compute a rate over zero decisions")]
    EmptyDecisions,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcuityCriterion {
    pub level: u8,
    pub label: String,
    pub description: String,
    #[serde(default)]
    pub entry_conditions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedFlagIndicator {
    pub id: String,
    pub phrase: String,
    /// Least urgent level a case showing this flag may receive.
    pub min_acuity: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriagePolicy {
    pub scale: Scale,
    pub name: String,
    pub version: String,
    #[serde(default)]
    pub provenance: String,
    pub levels: Vec<AcuityCriterion>,
    pub red_flags: Vec<RedFlagIndicator>,
    #[serde(default)]
    pub prompt_text: String,
}

impl TriagePolicy {
    /// Parses and validates a policy document, then renders its prompt.
    pub fn from_json(json: &str) -> Result<Self, PolicyError> {
        let mut policy: TriagePolicy = serde_json::from_str(json).map_err(|e| PolicyError::Malformed(e.to_string()))?;
        policy.validate()?;
        policy.prompt_text = policy.render_prompt();
        Ok(policy)
    }

    fn validate(&self) -> Result<(), PolicyError> {
        if self.levels.len() != 5 {
            return Err(PolicyError::Malformed(format!(
                "expected exactly 5 acuity levels, found {}",
                self.levels.len()
            )));
        }
        for (i, level) in self.levels.iter().enumerate() {
            if usize::from(level.level) != i + 1 {
                return Err(PolicyError::Malformed(format!(
                    "levels must be listed 1..=5 in order; position {} holds level {}",
                    i + 1,
                    level.level
                )));
            }
            if level.description.trim().is_empty() {
                return Err(PolicyError::Malformed(format!(
                    "level {} has no description",
                    level.level
                )));
            }
        }
        let mut ids = HashSet::new();
        for flag in &self.red_flags {
            if !(1..=5).contains(&flag.min_acuity) {
                return Err(PolicyError::Malformed(format!(
                    "red flag {} maps to level {}",
                    flag.id, flag.min_acuity
                )));
            }
            if !ids.insert(flag.id.as_str()) {
                return Err(PolicyError::Malformed(format!("duplicate red flag id {}", flag.id)));
            }
        }
        Ok(())
    }

    /// Full policy prompt; a pure function of the structure.
    pub fn render_prompt(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Triage policy: {} ({}), version {}.",
            self.name, self.scale, self.version
        );
        let _ = writeln!(out, "Level 1 is the most urgent and level 5 the least urgent.");
        out.push('\n');
        for level in &self.levels {
            let _ = writeln!(out, "Level {} - {}: {}", level.level, level.label, level.description);
            for cond in &level.entry_conditions {
                let _ = writeln!(out, "  * {cond}");
            }
        }
        out.push('\n');
        out.push_str(&self.render_red_flags());
        out
    }

    fn render_red_flags(&self) -> String {
        let mut out =
            String::from("Red flags (cite by id; a case with the flag is at least as urgent as the level shown):\n");
        for flag in &self.red_flags {
            let _ = writeln!(
                out,
                "  - {} [level {} or more urgent]: {}",
                flag.id, flag.min_acuity, flag.phrase
            );
        }
        out
    }

    /// Policy framing for a nurse's guideline adherence.
    pub fn render_for_adherence(&self, adherence: GuidelineAdherence) -> String {
        match adherence {
            GuidelineAdherence::Strict => format!(
                "{}\nFollow this policy verbatim. You must request the relevant vital signs \
                 before assigning a level and justify the level against the listed criteria.\n",
                self.prompt_text
            ),
            GuidelineAdherence::Moderate => format!(
                "{}\nUse this policy as your main reference; request vital signs when they \
                 would change your decision.\n",
                self.prompt_text
            ),
            GuidelineAdherence::Loose => {
                let mut out = format!("Triage policy summary: {} ({}).\n", self.name, self.scale);
                for level in &self.levels {
                    let _ = writeln!(out, "Level {}: {}", level.level, level.label);
                }
                out.push_str(&self.render_red_flags());
                out.push_str("Rely on your clinical judgement; vital signs are optional.\n");
                out
            }
        }
    }

    pub fn red_flag(&self, id: &str) -> Option<&RedFlagIndicator> {
        self.red_flags.iter().find(|f| f.id == id)
    }
}

/// Loads the bundled policy for `scale`.
pub fn load_policy(scale: Scale) -> Result<TriagePolicy, PolicyError> {
    let json = match scale {
        Scale::Ats => ATS_JSON,
        Scale::Esi => ESI_JSON,
    };
    check_scale(TriagePolicy::from_json(json)?, scale)
}

pub fn load_policy_file(path: &Path, scale: Scale) -> Result<TriagePolicy, PolicyError> {
    let json = std::fs::read_to_string(path).map_err(|e| PolicyError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    check_scale(TriagePolicy::from_json(&json)?, scale)
}

fn check_scale(policy: TriagePolicy, expected: Scale) -> Result<TriagePolicy, PolicyError> {
    if policy.scale != expected {
        return Err(PolicyError::ScaleMismatch {
            expected,
            found: policy.scale,
        });
    }
    Ok(policy)
}

/// A nurse's logged assessment at one turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageDecision {
    pub acuity: u8,
    pub confidence: f64,
    #[serde(default)]
    pub red_flags_cited: Vec<String>,
    pub turn_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriageOutcome {
    Exact,
    OverTriage,
    UnderTriage,
}

/// Compares a decision with ground truth; a lower level is more urgent.
pub fn classify_decision(decision: u8, ground_truth: u8) -> Result<TriageOutcome, PolicyError> {
    for v in [decision, ground_truth] {
        if !(1..=5).contains(&v) {
            return Err(PolicyError::AcuityOutOfRange(v));
        }
    }
    Ok(match decision.cmp(&ground_truth) {
        std::cmp::Ordering::Less => TriageOutcome::OverTriage,
        std::cmp::Ordering::Greater => TriageOutcome::UnderTriage,
        std::cmp::Ordering::Equal => TriageOutcome::Exact,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriageRates {
    pub n: usize,
    pub over: usize,
    pub under: usize,
    pub exact: usize,
}

impl TriageRates {
    pub fn over_rate(&self) -> f64 {
        self.over as f64 / self.n as f64
    }

    pub fn under_rate(&self) -> f64 {
        self.under as f64 / self.n as f64
    }

    pub fn exact_rate(&self) -> f64 {
        self.exact as f64 / self.n as f64
    }
}

pub fn triage_rates(pairs: &[(u8, u8)]) -> Result<TriageRates, PolicyError> {
    if pairs.is_empty() {
        return Err(PolicyError::EmptyDecisions);
    }
    let mut rates = TriageRates {
        n: pairs.len(),
        over: 0,
        under: 0,
        exact: 0,
    };
    for &(d, g) in pairs {
        match classify_decision(d, g)? {
            TriageOutcome::Exact => rates.exact += 1,
            TriageOutcome::OverTriage => rates.over += 1,
            TriageOutcome::UnderTriage => rates.under += 1,
        }
    }
    Ok(rates)
}

/// Fraction of `(decision, ground_truth)` pairs that are over-triaged.
pub fn over_triage_rate(pairs: &[(u8, u8)]) -> Result<f64, PolicyError> {
    Ok(triage_rates(pairs)?.over_rate())
}
