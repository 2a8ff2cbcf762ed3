use std::sync::Arc;
use std::time::{Duration, Instant};

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::{info, warn};

use super::{AgentBackend, BackendError, ChatMessage};
use crate::http::{HttpRequest, HttpTransport, Method, RetryPolicy, TokenBucket, UreqTransport};

/// Connection settings for an OpenAI-compatible chat-completion gateway.
/// Secrets are referenced by environment variable name only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub backend_id: String,
    pub endpoint: String,
    pub model_id: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub temperature: Option<f32>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub max_tokens: Option<u32>,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: u64,
    #[serde(default)]
    pub requests_per_minute: Option<u32>,
}

fn default_timeout_s() -> u64 {
    120
}

pub struct RemoteBackend {
    config: RemoteConfig,
    api_key: Option<String>,
    transport: Arc<dyn HttpTransport>,
    retry: RetryPolicy,
    limiter: Option<TokenBucket>,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize, Default)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl RemoteBackend {
    /// Builds a backend using the real HTTP transport, reading the API key
    /// from the configured environment variable.
    pub fn new(config: RemoteConfig) -> Result<Self, BackendError> {
        let api_key = match &config.api_key_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| BackendError::Config(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        Ok(Self::with_transport(
            config,
            api_key,
            Arc::new(UreqTransport::default()),
        ))
    }

    pub fn with_transport(config: RemoteConfig, api_key: Option<String>, transport: Arc<dyn HttpTransport>) -> Self {
        let limiter = config.requests_per_minute.map(TokenBucket::per_minute);
        Self {
            config,
            api_key,
            transport,
            retry: RetryPolicy::default(),
            limiter,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn url(&self) -> String {
        let base = self.config.endpoint.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }

    fn request_body(&self, messages: Vec<Value>) -> Value {
        let mut body = json!({
            "model": self.config.model_id,
            "messages": messages,
        });
        if let Some(t) = self.config.temperature {
            body["temperature"] = json!(t);
        }
        if let Some(s) = self.config.seed {
            body["seed"] = json!(s);
        }
        if let Some(m) = self.config.max_tokens {
            body["max_tokens"] = json!(m);
        }
        body
    }

    fn post(&self, body: &Value) -> Result<String, BackendError> {
        let mut headers = vec![("Content-Type".to_string(), "application/json".to_string())];
        if let Some(key) = &self.api_key {
            headers.push(("Authorization".into(), format!("Bearer {key}")));
        }
        let request = HttpRequest {
            method: Method::Post,
            url: self.url(),
            headers,
            body: Some(body.to_string()),
            timeout: Duration::from_secs(self.config.timeout_s),
        };
        self.retry.run(
            |attempt| {
                if let Some(limiter) = &self.limiter {
                    limiter.acquire();
                }
                let started = Instant::now();
                let result = self.send_once(&request);
                let latency_ms = started.elapsed().as_millis() as u64;
                match &result {
                    Ok((_, usage)) => info!(
                        backend = %self.config.backend_id,
                        model = %self.config.model_id,
                        attempt,
                        latency_ms,
                        prompt_tokens = usage.prompt_tokens,
                        completion_tokens = usage.completion_tokens,
                        "chat completion"
                    ),
                    Err(e) => warn!(
                        backend = %self.config.backend_id,
                        attempt,
                        latency_ms,
                        error = %e,
                        "chat completion failed"
                    ),
                }
                result.map(|(text, _)| text)
            },
            BackendError::retry_hint,
        )
    }

    fn send_once(&self, request: &HttpRequest) -> Result<(String, Usage), BackendError> {
        let response = self.transport.send(request)?;
        match response.status {
            200..=299 => {}
            429 => {
                return Err(BackendError::RateLimited {
                    retry_after: response.retry_after,
                })
            }
            408 | 504 => return Err(BackendError::Timeout),
            status => {
                return Err(BackendError::Http {
                    status,
                    body: response.body,
                })
            }
        }
        let parsed: CompletionResponse =
            serde_json::from_str(&response.body).map_err(|e| BackendError::Decode(e.to_string()))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default();
        if text.trim().is_empty() {
            return Err(BackendError::EmptyResponse);
        }
        Ok((text, parsed.usage.unwrap_or_default()))
    }
}

impl AgentBackend for RemoteBackend {
    fn backend_id(&self) -> &str {
        &self.config.backend_id
    }

    fn model_id(&self) -> &str {
        &self.config.model_id
    }

    fn complete(&self, system_prompt: &str, history: &[ChatMessage]) -> Result<String, BackendError> {
        let mut messages = vec![json!({"role": "system", "content": system_prompt})];
        messages.extend(history.iter().map(|m| json!({"role": m.role, "content": m.content})));
        self.post(&self.request_body(messages))
    }

    fn complete_with_audio(&self, system_prompt: &str, instruction: &str, wav: &[u8]) -> Result<String, BackendError> {
        let data = base64::engine::general_purpose::STANDARD.encode(wav);
        let messages = vec![
            json!({"role": "system", "content": system_prompt}),
            json!({"role": "user", "content": [
                {"type": "text", "text": instruction},
                {"type": "input_audio", "input_audio": {"data": data, "format": "wav"}},
            ]}),
        ];
        self.post(&self.request_body(messages))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http::{HttpResponse, TransportError};
    use std::sync::Mutex;

    struct FakeTransport {
        replies: Mutex<Vec<Result<HttpResponse, TransportError>>>,
        seen: Mutex<Vec<HttpRequest>>,
    }

    impl FakeTransport {
        fn new(mut replies: Vec<Result<HttpResponse, TransportError>>) -> Arc<Self> {
            replies.reverse();
            Arc::new(Self {
                replies: Mutex::new(replies),
                seen: Mutex::new(Vec::new()),
            })
        }
    }

    impl HttpTransport for FakeTransport {
        fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
            self.seen.lock().unwrap().push(request.clone());
            self.replies.lock().unwrap().pop().expect("unexpected request")
        }
    }

    fn status(code: u16, body: &str) -> Result<HttpResponse, TransportError> {
        Ok(HttpResponse {
            status: code,
            body: body.into(),
            retry_after: None,
        })
    }

    fn ok(text: &str) -> Result<HttpResponse, TransportError> {
        status(
            200,
            &json!({"choices": [{"message": {"role": "assistant", "content": text}}],
                    "usage": {"prompt_tokens": 10, "completion_tokens": 2}})
            .to_string(),
        )
    }

    fn config() -> RemoteConfig {
        RemoteConfig {
            backend_id: "gw".into(),
            endpoint: "http://localhost:9/v1".into(),
            model_id: "test-model".into(),
            api_key_env: None,
            temperature: Some(0.7),
            seed: Some(3),
            max_tokens: None,
            timeout_s: 5,
            requests_per_minute: None,
        }
    }

    fn no_sleep() -> RetryPolicy {
        RetryPolicy::default().with_sleeper(Arc::new(|_| {}))
    }

    #[test]
    fn recovers_after_two_rate_limits() {
        let t = FakeTransport::new(vec![status(429, ""), status(429, ""), ok("hello")]);
        let b = RemoteBackend::with_transport(config(), Some("k".into()), t.clone()).with_retry(no_sleep());
        assert_eq!(b.complete("sys", &[ChatMessage::user("hi")]).unwrap(), "hello");
        let seen = t.seen.lock().unwrap();
        assert_eq!(seen.len(), 3);
        assert_eq!(seen[0].url, "http://localhost:9/v1/chat/completions");
        assert!(seen[0].headers.contains(&("Authorization".into(), "Bearer k".into())));
        let body: Value = serde_json::from_str(seen[0].body.as_deref().unwrap()).unwrap();
        assert_eq!(body["model"], "test-model");
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][1]["content"], "hi");
    }

    #[test]
    fn client_errors_are_not_retried() {
        let t = FakeTransport::new(vec![status(400, "bad")]);
        let b = RemoteBackend::with_transport(config(), None, t.clone()).with_retry(no_sleep());
        assert!(matches!(
            b.complete("", &[]),
            Err(BackendError::Http { status: 400, .. })
        ));
        assert_eq!(t.seen.lock().unwrap().len(), 1);
    }

    #[test]
    fn persistent_timeouts_give_typed_error() {
        let t = FakeTransport::new((0..5).map(|_| Err(TransportError::Timeout)).collect());
        let b = RemoteBackend::with_transport(config(), None, t.clone()).with_retry(no_sleep());
        assert!(matches!(
            b.complete("", &[]),
            Err(BackendError::Transport(TransportError::Timeout))
        ));
        assert_eq!(t.seen.lock().unwrap().len(), 5);
    }

    #[test]
    fn empty_completion_is_an_error() {
        let t = FakeTransport::new(vec![ok("  ")]);
        let b = RemoteBackend::with_transport(config(), None, t).with_retry(no_sleep());
        assert_eq!(b.complete("", &[]), Err(BackendError::EmptyResponse));
    }

    #[test]
    fn audio_requests_carry_input_audio_part() {
        let t = FakeTransport::new(vec![ok("{\"acuity\":3}")]);
        let b = RemoteBackend::with_transport(config(), None, t.clone()).with_retry(no_sleep());
        b.complete_with_audio("sys", "classify", b"RIFF").unwrap();
        let seen = t.seen.lock().unwrap();
        let body: Value = serde_json::from_str(seen[0].body.as_deref().unwrap()).unwrap();
        assert_eq!(body["messages"][1]["content"][1]["type"], "input_audio");
        assert_eq!(body["messages"][1]["content"][1]["input_audio"]["data"], "UklGRg==");
    }

    #[test]
    fn missing_key_variable_is_a_config_error() {
        let mut c = config();
        c.api_key_env = Some("TRIAGESIM_TEST_UNSET_KEY_VAR".into());
        assert!(matches!(RemoteBackend::new(c), Err(BackendError::Config(_))));
    }
}
