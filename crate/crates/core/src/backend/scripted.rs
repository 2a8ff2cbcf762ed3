use std::sync::Mutex;

use super::{AgentBackend, BackendError, ChatMessage};

/// Canned response served whenever the latest message contains `contains`.
#[derive(Debug, Clone)]
pub struct ScriptRule {
    pub contains: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordedCall {
    pub system_prompt: String,
    pub history: Vec<ChatMessage>,
}

/// Deterministic backend replaying an ordered script.
///
/// Rules are checked first against the latest message; otherwise the next
/// sequential response is served. Running past the end of the script is an
/// error, never a silent repeat.
#[derive(Debug)]
pub struct ScriptedAgent {
    id: String,
    model_id: String,
    responses: Vec<String>,
    rules: Vec<ScriptRule>,
    cursor: Mutex<usize>,
    calls: Mutex<Vec<RecordedCall>>,
}

impl ScriptedAgent {
    pub fn new(id: impl Into<String>, responses: Vec<String>) -> Self {
        let id = id.into();
        Self {
            model_id: format!("scripted/{id}"),
            id,
            responses,
            rules: Vec::new(),
            cursor: Mutex::new(0),
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn with_model_id(mut self, model_id: impl Into<String>) -> Self {
        self.model_id = model_id.into();
        self
    }

    pub fn with_rule(mut self, contains: impl Into<String>, response: impl Into<String>) -> Self {
        self.rules.push(ScriptRule {
            contains: contains.into(),
            response: response.into(),
        });
        self
    }

    /// Every context this agent has been called with, in order.
    pub fn calls(&self) -> Vec<RecordedCall> {
        self.calls.lock().expect("calls lock").clone()
    }

    pub fn remaining(&self) -> usize {
        self.responses.len() - *self.cursor.lock().expect("cursor lock")
    }
}

impl AgentBackend for ScriptedAgent {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, system_prompt: &str, history: &[ChatMessage]) -> Result<String, BackendError> {
        let mut calls = self.calls.lock().expect("calls lock");
        calls.push(RecordedCall {
            system_prompt: system_prompt.to_string(),
            history: history.to_vec(),
        });
        if let Some(last) = history.last() {
            if let Some(rule) = self.rules.iter().find(|r| last.content.contains(&r.contains)) {
                return Ok(rule.response.clone());
            }
        }
        let mut cursor = self.cursor.lock().expect("cursor lock");
        match self.responses.get(*cursor) {
            Some(r) => {
                *cursor += 1;
                Ok(r.clone())
            }
            None => Err(BackendError::ScriptExhausted {
                backend: self.id.clone(),
                calls: calls.len(),
            }),
        }
    }

    fn complete_with_audio(&self, system_prompt: &str, instruction: &str, _wav: &[u8]) -> Result<String, BackendError> {
        self.complete(system_prompt, &[ChatMessage::user(instruction)])
    }
}

type CompleteFn = dyn Fn(&str, &[ChatMessage]) -> Result<String, BackendError> + Send + Sync;

/// Backend computed by a closure; used for echo classifiers and fault injection.
pub struct FnAgent {
    id: String,
    model_id: String,
    f: Box<CompleteFn>,
}

impl FnAgent {
    pub fn new(
        id: impl Into<String>,
        f: impl Fn(&str, &[ChatMessage]) -> Result<String, BackendError> + Send + Sync + 'static,
    ) -> Self {
        let id = id.into();
        Self {
            model_id: format!("fn/{id}"),
            id,
            f: Box::new(f),
        }
    }

    pub fn with_model_id(mut self, model_id: impl Into<String>) -> Self {
        self.model_id = model_id.into();
        self
    }
}

impl AgentBackend for FnAgent {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, system_prompt: &str, history: &[ChatMessage]) -> Result<String, BackendError> {
        (self.f)(system_prompt, history)
    }

    fn complete_with_audio(&self, system_prompt: &str, instruction: &str, _wav: &[u8]) -> Result<String, BackendError> {
        (self.f)(system_prompt, &[ChatMessage::user(instruction)])
    }
}
