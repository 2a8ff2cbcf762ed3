//! Chat-agent abstraction shared by persona generation, the dialogue loop,
//! prosody annotation and the triage classifier.
//!
//! Three providers implement [`AgentBackend`]: [`RemoteBackend`] speaks the
//! OpenAI-style chat-completion protocol, [`ScriptedAgent`] replays canned
//! responses for tests, and [`FnAgent`] wraps a closure.

mod remote;
mod scripted;
pub mod simulated;

use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::TransportError;

pub use remote::{RemoteBackend, RemoteConfig};
pub use scripted::{FnAgent, RecordedCall, ScriptRule, ScriptedAgent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("rate limited")]
    RateLimited { retry_after: Option<Duration> },
    #[error("backend timed out")]
    Timeout,
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("script for {backend} exhausted after {calls} calls")]
    ScriptExhausted { backend: String, calls: usize },
    #[error("backend returned an empty completion")]
    EmptyResponse,
    #[error("cannot decode backend response: {0}")]
    Decode(String),
    #[error("{0} is not supported by this backend")]
    Unsupported(&'static str),
    #[error("backend configuration error: {0}")]
    Config(String),
}

impl BackendError {
    /// `Some(server_hint)` when a transport-level retry may succeed.
    pub fn retry_hint(&self) -> Option<Option<Duration>> {
        match self {
            BackendError::Transport(_) | BackendError::Timeout => Some(None),
            BackendError::RateLimited { retry_after } => Some(*retry_after),
            BackendError::Http { status, .. } if *status >= 500 => Some(None),
            _ => None,
        }
    }
}

/// A chat agent: system prompt plus history in, text out.
pub trait AgentBackend: Send + Sync {
    fn backend_id(&self) -> &str;

    /// Model identifier recorded in every transcript this backend contributes to.
    fn model_id(&self) -> &str;

    fn complete(&self, system_prompt: &str, history: &[ChatMessage]) -> Result<String, BackendError>;

    /// Completion over an audio clip (WAV bytes) plus a text instruction.
    fn complete_with_audio(
        &self,
        _system_prompt: &str,
        _instruction: &str,
        _wav: &[u8],
    ) -> Result<String, BackendError> {
        Err(BackendError::Unsupported("audio input"))
    }
}

impl<T: AgentBackend + ?Sized> AgentBackend for Box<T> {
    fn backend_id(&self) -> &str {
        (**self).backend_id()
    }

    fn model_id(&self) -> &str {
        (**self).model_id()
    }

    fn complete(&self, system_prompt: &str, history: &[ChatMessage]) -> Result<String, BackendError> {
        (**self).complete(system_prompt, history)
    }

    fn complete_with_audio(&self, system_prompt: &str, instruction: &str, wav: &[u8]) -> Result<String, BackendError> {
        (**self).complete_with_audio(system_prompt, instruction, wav)
    }
}

/// Picks the generating backend uniformly at random.
pub fn pick_generator<'a, R: Rng + ?Sized>(backend_ids: &'a [String], rng: &mut R) -> Result<&'a str, BackendError> {
    if backend_ids.is_empty() {
        return Err(BackendError::Config("no generator backends configured".into()));
    }
    Ok(&backend_ids[rng.random_range(0..backend_ids.len())])
}
