//! Simulation of persona-conditioned emergency department triage conversations.
//!
//! The crate is organised along the generation pipeline:
//!
//! * [`case`] ingests and validates structured seed cases.
//! * [`persona`] samples and validates patient and nurse personas.
//! * [`policy`] holds ATS/ESI triage policies and decision scoring.
//! * [`backend`] abstracts chat agents (remote, scripted, simulated).
//! * [`dialogue`] runs the nurse/patient/master conversation loop.
//! * [`prosody`] annotates utterances with phrase-break tokens.
//! * [`speech`] selects voices, drives TTS through the model bridge and mixes
//!   the ED soundscape.
//! * [`metrics`] evaluates the resulting corpus.

pub mod backend;
pub mod case;
pub mod dialogue;
pub mod fixtures;
pub mod http;
pub mod metrics;
pub mod persona;
pub mod policy;
pub mod prosody;
pub mod rng;
pub mod speech;

pub use case::{Scale, Source, TriageCase, VitalSet};
pub use dialogue::{Transcript, TriageDecision};
pub use persona::{NursePersona, PatientPersona};
pub use policy::TriagePolicy;
