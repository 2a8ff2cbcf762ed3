//! Nurse behaviour aggregates by persona attribute, with normal-approximation
//! 95% intervals.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dialogue::Transcript;
use crate::persona::{ExperienceLevel, GuidelineAdherence, RiskTolerance};
use crate::policy::{classify_decision, TriageOutcome};

const Z_95: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    pub group: String,
    pub n: usize,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Fewer than two observations: the interval collapses to the mean.
    pub degenerate: bool,
}

impl GroupStat {
    /// Mean and mean +- 1.96 * s / sqrt(n) with the sample standard deviation.
    pub fn from_values(group: impl Into<String>, values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let (half, degenerate) = if n < 2 {
            (0.0, true)
        } else {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (Z_95 * (var / n as f64).sqrt(), false)
        };
        Some(Self {
            group: group.into(),
            n,
            mean,
            ci_low: mean - half,
            ci_high: mean + half,
            degenerate,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviouralReport {
    pub confidence_by_experience: Vec<GroupStat>,
    pub over_triage_by_risk: Vec<GroupStat>,
    pub vital_checks_by_adherence: Vec<GroupStat>,
    pub notes: Vec<String>,
}

fn collect<K: Ord + Copy + ToString>(
    metric: &str,
    order: &[K],
    values: BTreeMap<K, Vec<f64>>,
    notes: &mut Vec<String>,
) -> Vec<GroupStat> {
    let mut out = Vec::new();
    for k in order {
        match values.get(k).and_then(|v| GroupStat::from_values(k.to_string(), v)) {
            Some(stat) => {
                if stat.degenerate {
                    notes.push(format!(
                        "{metric}: group {} has one observation; interval is degenerate",
                        k.to_string()
                    ));
                }
                out.push(stat);
            }
            None => notes.push(format!(
                "{metric}: group {} has no observations; omitted",
                k.to_string()
            )),
        }
    }
    out
}

/// Aggregates final confidence by experience level, over-triage rate by risk
/// tolerance and request_vital turns by guideline adherence.
///
/// `ground_truth` maps case ids to acuity. Conversations without a final
/// decision count only towards vital checks; missing ground truth excludes a
/// conversation from the over-triage rate.
pub fn behavioural_report(transcripts: &[Transcript], ground_truth: &BTreeMap<String, u8>) -> BehaviouralReport {
    let mut confidence: BTreeMap<ExperienceLevel, Vec<f64>> = BTreeMap::new();
    let mut over: BTreeMap<RiskTolerance, Vec<f64>> = BTreeMap::new();
    let mut checks: BTreeMap<GuidelineAdherence, Vec<f64>> = BTreeMap::new();
    let mut notes = Vec::new();

    for t in transcripts {
        let nurse = &t.nurse_persona;
        checks
            .entry(nurse.guideline_adherence)
            .or_default()
            .push(t.vital_requests() as f64);
        let Some(decision) = &t.final_decision else {
            notes.push(format!("{}: no final decision", t.conversation_id));
            continue;
        };
        confidence
            .entry(nurse.experience_level)
            .or_default()
            .push(decision.confidence);
        match ground_truth
            .get(&t.case_id)
            .map(|&gt| classify_decision(decision.acuity, gt))
        {
            Some(Ok(outcome)) => over
                .entry(nurse.risk_tolerance)
                .or_default()
                .push(if outcome == TriageOutcome::OverTriage { 1.0 } else { 0.0 }),
            Some(Err(e)) => notes.push(format!("{}: {e}", t.conversation_id)),
            None => notes.push(format!("{}: no ground truth for case {}", t.conversation_id, t.case_id)),
        }
    }

    let confidence_by_experience = collect("confidence", &ExperienceLevel::ALL, confidence, &mut notes);
    let over_triage_by_risk = collect("over_triage", &RiskTolerance::ALL, over, &mut notes);
    let vital_checks_by_adherence = collect("vital_checks", &GuidelineAdherence::ALL, checks, &mut notes);
    BehaviouralReport {
        confidence_by_experience,
        over_triage_by_risk,
        vital_checks_by_adherence,
        notes,
    }
}

impl BehaviouralReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (title, rows) in [
            ("Final confidence by experience level", &self.confidence_by_experience),
            ("Over-triage rate by risk tolerance", &self.over_triage_by_risk),
            (
                "Vital-sign checks by guideline adherence",
                &self.vital_checks_by_adherence,
            ),
        ] {
            out.push_str(title);
            out.push('\n');
            out.push_str(&format!("{:<14}{:>5}{:>9}{:>20}\n", "group", "n", "mean", "95% CI"));
            for r in rows {
                let ci = format!("[{:.3}, {:.3}]", r.ci_low, r.ci_high);
                out.push_str(&format!("{:<14}{:>5}{:>9.3}{:>20}\n", r.group, r.n, r.mean, ci));
            }
            out.push('\n');
        }
        out
    }
}
