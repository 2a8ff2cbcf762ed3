//! Patient and nurse persona schemata, samplers and consistency validation.

use std::fmt;
use std::ops::RangeInclusive;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{AgentBackend, BackendError, ChatMessage};
use crate::case::TriageCase;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    #[serde(alias = "F", alias = "f")]
    Female,
    #[serde(alias = "M", alias = "m")]
    Male,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::Female, Gender::Male];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgeGroup {
    Child,
    Adult,
    Elderly,
}

impl AgeGroup {
    pub const ALL: [AgeGroup; 3] = [AgeGroup::Child, AgeGroup::Adult, AgeGroup::Elderly];
}

/// Country of origin; each maps to one supported accent in the voice bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Country {
    Australian,
    Chinese,
    Indian,
    MiddleEastern,
}

impl Country {
    pub const ALL: [Country; 4] = [
        Country::Australian,
        Country::Chinese,
        Country::Indian,
        Country::MiddleEastern,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CognitiveState {
    Alert,
    Distressed,
    Confused,
}

impl CognitiveState {
    pub const ALL: [CognitiveState; 3] = [
        CognitiveState::Alert,
        CognitiveState::Distressed,
        CognitiveState::Confused,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperienceLevel {
    Novice,
    Intermediate,
    Expert,
}

impl ExperienceLevel {
    pub const ALL: [ExperienceLevel; 3] = [
        ExperienceLevel::Novice,
        ExperienceLevel::Intermediate,
        ExperienceLevel::Expert,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskTolerance {
    Low,
    Medium,
    High,
}

impl RiskTolerance {
    pub const ALL: [RiskTolerance; 3] = [RiskTolerance::Low, RiskTolerance::Medium, RiskTolerance::High];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidelineAdherence {
    Strict,
    Moderate,
    Loose,
}

impl GuidelineAdherence {
    pub const ALL: [GuidelineAdherence; 3] = [
        GuidelineAdherence::Strict,
        GuidelineAdherence::Moderate,
        GuidelineAdherence::Loose,
    ];
}

macro_rules! snake_display {
    ($($ty:ty),*) => {$(
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let v = serde_json::to_value(self).expect("unit enum");
                f.write_str(v.as_str().expect("unit enum serializes to a string"))
            }
        }
    )*};
}

snake_display!(
    Gender,
    AgeGroup,
    Country,
    CognitiveState,
    ExperienceLevel,
    RiskTolerance,
    GuidelineAdherence
);

pub const ORDINAL_RANGE: RangeInclusive<u8> = 1..=5;
pub const DISFLUENCY_RANGE: RangeInclusive<u8> = 0..=4;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatientPersona {
    pub gender: Gender,
    pub country_of_origin: Country,
    pub age_group: AgeGroup,
    /// 1 (minimal) to 5 (native-like).
    pub language_proficiency: u8,
    pub verbosity: u8,
    /// 0 (fluent) to 4 (heavily disfluent).
    pub disfluency_rate: u8,
    pub recall_accuracy: u8,
    pub cognitive_state: CognitiveState,
    pub topic_drift: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NursePersona {
    pub gender: Gender,
    pub experience_level: ExperienceLevel,
    pub risk_tolerance: RiskTolerance,
    pub guideline_adherence: GuidelineAdherence,
}

impl PatientPersona {
    /// Prompt-facing description of the persona.
    pub fn describe(&self) -> String {
        format!(
            "gender: {}; country of origin: {}; age group: {}; language proficiency: {}/5; \
             verbosity: {}/5; disfluency rate: {}/4; recall accuracy: {}/5; cognitive state: {}; \
             topic drift: {}/5",
            self.gender,
            self.country_of_origin,
            self.age_group,
            self.language_proficiency,
            self.verbosity,
            self.disfluency_rate,
            self.recall_accuracy,
            self.cognitive_state,
            self.topic_drift
        )
    }
}

impl NursePersona {
    pub fn describe(&self) -> String {
        format!(
            "gender: {}; experience level: {}; risk tolerance: {}; guideline adherence: {}",
            self.gender, self.experience_level, self.risk_tolerance, self.guideline_adherence
        )
    }
}

/// Disfluency levels allowed for a proficiency level.
pub fn allowed_disfluency(proficiency: u8) -> Option<RangeInclusive<u8>> {
    match proficiency {
        1 => Some(2..=4),
        2 => Some(1..=4),
        3 => Some(1..=3),
        4 => Some(0..=2),
        5 => Some(0..=1),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PersonaViolation {
    GenderConflict {
        persona: Gender,
        hint: Gender,
    },
    AgeGroupConflict {
        persona: AgeGroup,
        hint: AgeGroup,
    },
    Coherence {
        language_proficiency: u8,
        disfluency_rate: u8,
    },
    OutOfRange {
        field: String,
        value: u8,
    },
}

impl fmt::Display for PersonaViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PersonaViolation::GenderConflict { persona, hint } => {
                write!(f, "gender {persona} conflicts with vignette hint {hint}")
            }
            PersonaViolation::AgeGroupConflict { persona, hint } => {
                write!(f, "age group {persona} conflicts with vignette hint {hint}")
            }
            PersonaViolation::Coherence {
                language_proficiency,
                disfluency_rate,
            } => write!(
                f,
                "disfluency rate {disfluency_rate} incoherent with language proficiency {language_proficiency}"
            ),
            PersonaViolation::OutOfRange { field, value } => {
                write!(f, "{field}={value} out of range")
            }
        }
    }
}

pub fn validate_persona(persona: &PatientPersona, case: &TriageCase) -> Vec<PersonaViolation> {
    let mut out = Vec::new();
    if let Some(hint) = &case.patient_demographics_hint {
        if let Some(g) = hint.gender {
            if g != persona.gender {
                out.push(PersonaViolation::GenderConflict {
                    persona: persona.gender,
                    hint: g,
                });
            }
        }
        if let Some(a) = hint.age_group {
            if a != persona.age_group {
                out.push(PersonaViolation::AgeGroupConflict {
                    persona: persona.age_group,
                    hint: a,
                });
            }
        }
    }
    let ordinals = [
        ("language_proficiency", persona.language_proficiency, &ORDINAL_RANGE),
        ("verbosity", persona.verbosity, &ORDINAL_RANGE),
        ("disfluency_rate", persona.disfluency_rate, &DISFLUENCY_RANGE),
        ("recall_accuracy", persona.recall_accuracy, &ORDINAL_RANGE),
        ("topic_drift", persona.topic_drift, &ORDINAL_RANGE),
    ];
    for (field, value, range) in ordinals {
        if !range.contains(&value) {
            out.push(PersonaViolation::OutOfRange {
                field: field.into(),
                value,
            });
        }
    }
    if let Some(allowed) = allowed_disfluency(persona.language_proficiency) {
        if DISFLUENCY_RANGE.contains(&persona.disfluency_rate) && !allowed.contains(&persona.disfluency_rate) {
            out.push(PersonaViolation::Coherence {
                language_proficiency: persona.language_proficiency,
                disfluency_rate: persona.disfluency_rate,
            });
        }
    }
    out
}

#[derive(Debug, Error)]
pub enum PersonaError {
    #[error("persona generation failed after {attempts} attempts: {last_error}")]
    RetryCapExhausted { attempts: usize, last_error: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Fixed values that bypass sampling for the corresponding attribute.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NurseOverrides {
    pub gender: Option<Gender>,
    pub experience_level: Option<ExperienceLevel>,
    pub risk_tolerance: Option<RiskTolerance>,
    pub guideline_adherence: Option<GuidelineAdherence>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatientOverrides {
    pub country_of_origin: Option<Country>,
    pub disfluency_rate: Option<u8>,
}

/// Seeded categorical sampler: uniform over each attribute, subject to the
/// vignette hints and the proficiency/disfluency coherence table.
#[derive(Debug, Clone, Default)]
pub struct SeededPersonaSampler {
    pub nurse: NurseOverrides,
    pub patient: PatientOverrides,
}

fn pick<T: Copy, R: Rng + ?Sized>(items: &[T], rng: &mut R) -> T {
    *items.choose(rng).expect("non-empty attribute domain")
}

impl SeededPersonaSampler {
    pub fn sample_patient<R: Rng + ?Sized>(&self, case: &TriageCase, rng: &mut R) -> PatientPersona {
        let hint = case.patient_demographics_hint.clone().unwrap_or_default();
        let gender = hint.gender.unwrap_or_else(|| pick(&Gender::ALL, rng));
        let age_group = hint.age_group.unwrap_or_else(|| pick(&AgeGroup::ALL, rng));
        let country_of_origin = self
            .patient
            .country_of_origin
            .unwrap_or_else(|| pick(&Country::ALL, rng));
        let (language_proficiency, disfluency_rate) = match self.patient.disfluency_rate {
            Some(d) => {
                let compatible: Vec<u8> = ORDINAL_RANGE
                    .filter(|p| allowed_disfluency(*p).is_some_and(|r| r.contains(&d)))
                    .collect();
                (pick(&compatible, rng), d)
            }
            None => {
                let p = rng.random_range(ORDINAL_RANGE);
                let allowed = allowed_disfluency(p).expect("proficiency in range");
                (p, rng.random_range(allowed))
            }
        };
        PatientPersona {
            gender,
            country_of_origin,
            age_group,
            language_proficiency,
            verbosity: rng.random_range(ORDINAL_RANGE),
            disfluency_rate,
            recall_accuracy: rng.random_range(ORDINAL_RANGE),
            cognitive_state: pick(&CognitiveState::ALL, rng),
            topic_drift: rng.random_range(ORDINAL_RANGE),
        }
    }

    pub fn sample_nurse<R: Rng + ?Sized>(&self, rng: &mut R) -> NursePersona {
        // Draw every attribute even when overridden so overrides do not shift
        // the stream for the remaining attributes.
        let gender = pick(&Gender::ALL, rng);
        let experience = pick(&ExperienceLevel::ALL, rng);
        let risk = pick(&RiskTolerance::ALL, rng);
        let adherence = pick(&GuidelineAdherence::ALL, rng);
        NursePersona {
            gender: self.nurse.gender.unwrap_or(gender),
            experience_level: self.nurse.experience_level.unwrap_or(experience),
            risk_tolerance: self.nurse.risk_tolerance.unwrap_or(risk),
            guideline_adherence: self.nurse.guideline_adherence.unwrap_or(adherence),
        }
    }
}

pub const DEFAULT_PATIENT_TEMPLATE: &str = include_str!("../../../prompts/persona/patient.txt");
pub const DEFAULT_NURSE_TEMPLATE: &str = include_str!("../../../prompts/persona/nurse.txt");

/// Substitutes `{{key}}` placeholders.
pub fn render_template(template: &str, vars: &[(&str, String)]) -> String {
    let mut out = template.to_string();
    for (key, value) in vars {
        out = out.replace(&format!("{{{{{key}}}}}"), value);
    }
    out
}

/// Persona generation through a chat backend. Replies are parsed as JSON,
/// validated, and re-requested (with the failure appended) up to `retry_cap` times.
pub struct BackendPersonaGenerator<'a> {
    pub backend: &'a dyn AgentBackend,
    pub patient_template: String,
    pub nurse_template: String,
    pub retry_cap: usize,
}

impl<'a> BackendPersonaGenerator<'a> {
    pub fn new(backend: &'a dyn AgentBackend) -> Self {
        Self {
            backend,
            patient_template: DEFAULT_PATIENT_TEMPLATE.to_string(),
            nurse_template: DEFAULT_NURSE_TEMPLATE.to_string(),
            retry_cap: 3,
        }
    }

    pub fn sample_patient<R: Rng + ?Sized>(
        &self,
        case: &TriageCase,
        rng: &mut R,
    ) -> Result<PatientPersona, PersonaError> {
        let hint = case.patient_demographics_hint.clone().unwrap_or_default();
        let prompt = render_template(
            &self.patient_template,
            &[
                ("chief_complaint", case.chief_complaint.clone()),
                ("pain_score", case.pain_score.to_string()),
                (
                    "gender_hint",
                    hint.gender.map_or("unspecified".into(), |g| g.to_string()),
                ),
                (
                    "age_group_hint",
                    hint.age_group.map_or("unspecified".into(), |a| a.to_string()),
                ),
                ("variation_seed", rng.random::<u32>().to_string()),
            ],
        );
        self.generate(&prompt, |p: &PatientPersona| {
            let v = validate_persona(p, case);
            if v.is_empty() {
                Ok(())
            } else {
                Err(v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))
            }
        })
    }

    pub fn sample_nurse<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<NursePersona, PersonaError> {
        let prompt = render_template(
            &self.nurse_template,
            &[("variation_seed", rng.random::<u32>().to_string())],
        );
        self.generate(&prompt, |_: &NursePersona| Ok(()))
    }

    fn generate<T, F>(&self, prompt: &str, check: F) -> Result<T, PersonaError>
    where
        T: for<'de> Deserialize<'de>,
        F: Fn(&T) -> Result<(), String>,
    {
        let mut history = vec![ChatMessage::user("Generate the persona now.")];
        let mut last_error = String::new();
        for _ in 0..=self.retry_cap {
            let reply = self.backend.complete(prompt, &history)?;
            let result = serde_json::from_str::<T>(strip_code_fence(&reply))
                .map_err(|e| format!("invalid persona JSON: {e}"))
                .and_then(|p| check(&p).map(|_| p));
            match result {
                Ok(p) => return Ok(p),
                Err(e) => {
                    history.push(ChatMessage::assistant(reply));
                    history.push(ChatMessage::user(format!(
                        "That persona was rejected: {e}. Reply with a corrected JSON object only."
                    )));
                    last_error = e;
                }
            }
        }
        Err(PersonaError::RetryCapExhausted {
            attempts: self.retry_cap + 1,
            last_error,
        })
    }
}

/// Removes a surrounding Markdown code fence, if any.
pub fn strip_code_fence(text: &str) -> &str {
    let t = text.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    let rest = rest.strip_prefix("json").unwrap_or(rest);
    rest.strip_suffix("```").unwrap_or(rest).trim()
}
