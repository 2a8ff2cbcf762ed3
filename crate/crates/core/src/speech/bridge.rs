//! Client for the model bridge (`/v1/tts`, `/v1/asr`, `/v1/embed`,
//! `/v1/quality`, `/v1/health`) and an in-process implementation of its mock
//! mode.
//!
//! Mock TTS codes each UTF-8 byte `b` of the text as a 20 ms segment of a
//! 1 kHz sine with amplitude `(b + 1) / 512`; `<ip>` becomes one silent
//! segment and `<sb>` two. Mock ASR inverts this, so ASR(TTS(x)) == x.

use std::sync::Arc;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::voice::VoiceRef;
use super::wave::{wav_header_rate, Waveform, PIPELINE_SAMPLE_RATE};
use super::SpeechError;
use crate::http::{HttpRequest, HttpResponse, HttpTransport, Method, RetryPolicy, TokenBucket, TransportError};
use crate::prosody::{strip_breaks, AnnotatedUtterance, IP, SB};

pub const EMBED_DIM: usize = 64;
pub const MOCK_QUALITY: f64 = 3.0;

const SEGMENT: usize = 480;
const TONE_HZ: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtsRequest {
    pub annotated_text: String,
    /// Base64 WAV.
    pub reference_clip: String,
    pub reference_transcript: String,
    pub trait_instruction: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TtsResponse {
    wav: String,
    sample_rate: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct WavRequest {
    wav: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AsrResponse {
    transcript: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EmbedResponse {
    vector: Vec<f64>,
    dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct QualityResponse {
    score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeHealth {
    pub status: String,
    pub mode: String,
    #[serde(default)]
    pub model_ids: std::collections::BTreeMap<String, String>,
}

pub trait SpeechBridge: Send + Sync {
    fn health(&self) -> Result<BridgeHealth, SpeechError>;
    /// Returns audio at the pipeline rate or a typed error.
    fn tts(&self, request: &TtsRequest) -> Result<Waveform, SpeechError>;
    fn asr(&self, audio: &Waveform) -> Result<String, SpeechError>;
    fn embed(&self, audio: &Waveform) -> Result<Vec<f64>, SpeechError>;
    fn quality(&self, audio: &Waveform) -> Result<f64, SpeechError>;
}

/// JSON-over-HTTP bridge client.
pub struct HttpBridge {
    base_url: String,
    transport: Arc<dyn HttpTransport>,
    retry: RetryPolicy,
    timeout: Duration,
    limiter: Option<TokenBucket>,
    expected_rate: u32,
}

enum CallError {
    Transport(TransportError),
    Status(HttpResponse),
}

impl HttpBridge {
    pub fn new(base_url: impl Into<String>, transport: Arc<dyn HttpTransport>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            transport,
            retry: RetryPolicy::default(),
            timeout: Duration::from_secs(300),
            limiter: None,
            expected_rate: PIPELINE_SAMPLE_RATE,
        }
    }

    /// Mock mode served in process; no network.
    pub fn mock() -> Self {
        Self::new("mock://bridge", Arc::new(MockTransport::default()))
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_rate_limit(mut self, requests_per_minute: u32) -> Self {
        self.limiter = Some(TokenBucket::per_minute(requests_per_minute));
        self
    }

    fn call<T: DeserializeOwned>(
        &self,
        endpoint: &'static str,
        method: Method,
        body: Option<String>,
    ) -> Result<T, SpeechError> {
        let request = HttpRequest {
            method,
            url: format!("{}/v1/{endpoint}", self.base_url),
            headers: vec![("content-type".into(), "application/json".into())],
            body,
            timeout: self.timeout,
        };
        let result = self.retry.run(
            |_| {
                if let Some(l) = &self.limiter {
                    l.acquire();
                }
                match self.transport.send(&request) {
                    Err(e) => Err(CallError::Transport(e)),
                    Ok(r) if (200..300).contains(&r.status) => Ok(r),
                    Ok(r) => Err(CallError::Status(r)),
                }
            },
            |e| match e {
                CallError::Transport(_) => Some(None),
                CallError::Status(r) if r.status == 429 || r.status >= 500 => Some(r.retry_after),
                CallError::Status(_) => None,
            },
        );
        let response = result.map_err(|e| match e {
            CallError::Transport(source) => SpeechError::BridgeTransport { endpoint, source },
            CallError::Status(r) => SpeechError::BridgeStatus {
                endpoint,
                status: r.status,
                body: r.body,
            },
        })?;
        serde_json::from_str(&response.body).map_err(|e| SpeechError::BridgeDecode {
            endpoint,
            message: e.to_string(),
        })
    }

    fn wav_body(audio: &Waveform) -> Result<String, SpeechError> {
        Ok(json!({"wav": B64.encode(audio.to_wav_bytes()?)}).to_string())
    }
}

impl SpeechBridge for HttpBridge {
    fn health(&self) -> Result<BridgeHealth, SpeechError> {
        self.call("health", Method::Get, None)
    }

    fn tts(&self, request: &TtsRequest) -> Result<Waveform, SpeechError> {
        if strip_breaks(&request.annotated_text).trim().is_empty() {
            return Err(SpeechError::EmptyText);
        }
        let body = serde_json::to_string(request).expect("request serializes");
        let resp: TtsResponse = self.call("tts", Method::Post, Some(body))?;
        let bytes = B64.decode(resp.wav.as_bytes()).map_err(|e| SpeechError::BridgeDecode {
            endpoint: "tts",
            message: e.to_string(),
        })?;
        let header = wav_header_rate(&bytes)?;
        if header != resp.sample_rate || resp.sample_rate != self.expected_rate {
            return Err(SpeechError::SampleRateMismatch {
                declared: resp.sample_rate,
                header,
                expected: self.expected_rate,
            });
        }
        Waveform::from_wav_bytes(&bytes)
    }

    fn asr(&self, audio: &Waveform) -> Result<String, SpeechError> {
        let r: AsrResponse = self.call("asr", Method::Post, Some(Self::wav_body(audio)?))?;
        Ok(r.transcript)
    }

    fn embed(&self, audio: &Waveform) -> Result<Vec<f64>, SpeechError> {
        let r: EmbedResponse = self.call("embed", Method::Post, Some(Self::wav_body(audio)?))?;
        if r.vector.len() != r.dim {
            return Err(SpeechError::BridgeDecode {
                endpoint: "embed",
                message: format!("dim {} but {} values", r.dim, r.vector.len()),
            });
        }
        Ok(r.vector)
    }

    fn quality(&self, audio: &Waveform) -> Result<f64, SpeechError> {
        let r: QualityResponse = self.call("quality", Method::Post, Some(Self::wav_body(audio)?))?;
        Ok(r.score)
    }
}

fn tone_segment(amplitude: f64) -> impl Iterator<Item = f32> {
    (0..SEGMENT).map(move |i| {
        let phase = 2.0 * std::f64::consts::PI * TONE_HZ * i as f64 / f64::from(PIPELINE_SAMPLE_RATE);
        (amplitude * phase.sin()) as f32
    })
}

/// Mock TTS waveform for annotated text.
pub fn mock_encode_text(annotated: &str) -> Waveform {
    let mut samples = Vec::new();
    let mut first_word = true;
    for tok in annotated.split_whitespace() {
        let silent_segments = match tok {
            t if t == IP => 1,
            t if t == SB => 2,
            _ => 0,
        };
        if silent_segments > 0 {
            samples.resize(samples.len() + silent_segments * SEGMENT, 0.0);
            continue;
        }
        let word = strip_breaks(tok);
        let mut bytes = Vec::with_capacity(word.len() + 1);
        if !first_word {
            bytes.push(b' ');
        }
        first_word = false;
        bytes.extend_from_slice(word.as_bytes());
        for b in bytes {
            samples.extend(tone_segment(f64::from(b) + 1.0).map(|s| s / 512.0));
        }
    }
    Waveform::new(PIPELINE_SAMPLE_RATE, samples)
}

/// Inverse of [`mock_encode_text`] on the text channel.
pub fn mock_decode_text(audio: &Waveform) -> String {
    let bytes: Vec<u8> = audio
        .samples
        .chunks(SEGMENT)
        .filter_map(|seg| {
            let peak = seg.iter().fold(0.0f32, |m, s| m.max(s.abs()));
            let code = (f64::from(peak) * 512.0).round() as i64 - 1;
            (0..=255).contains(&code).then_some(code as u8)
        })
        .collect();
    String::from_utf8_lossy(&bytes).trim().to_string()
}

fn mock_embedding(wav_bytes: &[u8]) -> Vec<f64> {
    let digest = Sha256::digest(wav_bytes);
    let raw: Vec<f64> = (0..EMBED_DIM as u32)
        .map(|k| {
            let mut h = Sha256::new();
            h.update(digest);
            h.update(k.to_le_bytes());
            let out = h.finalize();
            let v = u64::from_le_bytes(out[..8].try_into().expect("8 bytes"));
            (v as f64 / u64::MAX as f64) * 2.0 - 1.0
        })
        .collect();
    let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    raw.into_iter().map(|x| x / norm).collect()
}

/// Mock-mode bridge server logic, independent of any socket.
#[derive(Debug, Clone, Default)]
pub struct MockBridge;

fn unprocessable(field: &str, message: &str) -> (u16, String) {
    (
        422,
        json!({"detail": [{"loc": ["body", field], "msg": message}]}).to_string(),
    )
}

impl MockBridge {
    /// Handles one request; returns status and JSON body.
    pub fn handle(&self, method: Method, path: &str, body: &str) -> (u16, String) {
        let wav_field = |body: &str| -> Result<Vec<u8>, (u16, String)> {
            let req: WavRequest = serde_json::from_str(body).map_err(|e| unprocessable("wav", &e.to_string()))?;
            let bytes = B64
                .decode(req.wav.as_bytes())
                .map_err(|e| unprocessable("wav", &e.to_string()))?;
            wav_header_rate(&bytes).map_err(|e| unprocessable("wav", &e.to_string()))?;
            Ok(bytes)
        };
        let result = match (method, path) {
            (Method::Get, "/v1/health") => Ok(json!({
                "status": "ok",
                "mode": "mock",
                "model_ids": {"tts": "mock-sine-v1", "asr": "mock-sine-v1",
                              "embed": "mock-hash-v1", "quality": "mock-constant-v1"},
            })),
            (Method::Post, "/v1/tts") => (|| {
                let req: TtsRequest =
                    serde_json::from_str(body).map_err(|e| unprocessable("annotated_text", &e.to_string()))?;
                if strip_breaks(&req.annotated_text).trim().is_empty() {
                    return Err(unprocessable("annotated_text", "must be non-empty"));
                }
                let reference = B64
                    .decode(req.reference_clip.as_bytes())
                    .map_err(|e| unprocessable("reference_clip", &e.to_string()))?;
                wav_header_rate(&reference).map_err(|e| unprocessable("reference_clip", &e.to_string()))?;
                let wav = mock_encode_text(&req.annotated_text)
                    .to_wav_bytes()
                    .map_err(|e| (500, json!({"detail": e.to_string()}).to_string()))?;
                Ok(json!({"wav": B64.encode(wav), "sample_rate": PIPELINE_SAMPLE_RATE}))
            })(),
            (Method::Post, "/v1/asr") => wav_field(body).and_then(|b| {
                let audio = Waveform::from_wav_bytes(&b).map_err(|e| unprocessable("wav", &e.to_string()))?;
                Ok(json!({"transcript": mock_decode_text(&audio)}))
            }),
            (Method::Post, "/v1/embed") => {
                wav_field(body).map(|b| json!({"vector": mock_embedding(&b), "dim": EMBED_DIM}))
            }
            (Method::Post, "/v1/quality") => wav_field(body).map(|_| json!({"score": MOCK_QUALITY})),
            _ => Err((404, json!({"detail": "not found"}).to_string())),
        };
        match result {
            Ok(v) => (200, v.to_string()),
            Err(e) => e,
        }
    }
}

/// [`HttpTransport`] that answers from [`MockBridge`] in process.
#[derive(Debug, Clone, Default)]
pub struct MockTransport {
    bridge: MockBridge,
}

impl HttpTransport for MockTransport {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let path = request
            .url
            .find("/v1/")
            .map(|i| &request.url[i..])
            .unwrap_or(&request.url);
        let (status, body) = self
            .bridge
            .handle(request.method, path, request.body.as_deref().unwrap_or(""));
        Ok(HttpResponse {
            status,
            body,
            retry_after: None,
        })
    }
}

/// Clones `voice` onto one annotated utterance.
pub fn synthesize_utterance(
    annotated: &AnnotatedUtterance,
    voice: &VoiceRef,
    reference: &Waveform,
    traits: &str,
    bridge: &dyn SpeechBridge,
) -> Result<Waveform, SpeechError> {
    if annotated.annotated.trim().is_empty() {
        return Err(SpeechError::EmptyText);
    }
    let request = TtsRequest {
        annotated_text: annotated.annotated.clone(),
        reference_clip: B64.encode(reference.to_wav_bytes()?),
        reference_transcript: voice.transcript.clone(),
        trait_instruction: traits.to_string(),
    };
    let audio = bridge.tts(&request)?;
    if audio.is_empty() || audio.rms() == 0.0 {
        return Err(SpeechError::EmptyAudio);
    }
    Ok(audio)
}
