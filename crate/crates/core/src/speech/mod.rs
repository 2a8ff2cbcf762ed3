//! Speech synthesis and soundscape mixing.
//!
//! Voices are picked from a voice bank by persona accent and gender, each
//! annotated utterance is cloned through the model bridge, utterances are laid
//! out into one session with seeded gaps, and the session is mixed with an
//! ambient bed and sparse ED events at fixed gains.

mod bridge;
mod mix;
mod session;
mod voice;
mod wave;

use std::path::PathBuf;

use thiserror::Error;

use crate::http::TransportError;

pub use bridge::{
    mock_decode_text, mock_encode_text, synthesize_utterance, BridgeHealth, HttpBridge, MockBridge, MockTransport,
    SpeechBridge, TtsRequest, EMBED_DIM, MOCK_QUALITY,
};
pub use mix::{
    db_to_linear, hard_limit, mix_session, mix_tracks, plan_mix, AmbientBed, MixConfig, MixEvent, MixOutput, MixPlan,
    NoiseAsset, NoiseBank, NoiseCategory, NoiseKind, AMBIENT_GAIN_DB, EVENT_GAIN_MAX_DB, EVENT_GAIN_MIN_DB,
    PEAK_CEILING,
};
pub use session::{assemble_session, AlignedUtterance, Alignment, AudioSession, GapPolicy, UtteranceClip};
pub use voice::{select_voice, Relaxation, VoiceBank, VoiceQuery, VoiceRef, VoiceSelection};
pub use wave::{rms, wav_header_rate, Waveform, PIPELINE_SAMPLE_RATE};

#[derive(Debug, Error)]
pub enum SpeechError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid WAV{}: {message}", path.as_ref().map(|p| format!(" {}", p.display())).unwrap_or_default())]
    Wav { path: Option<PathBuf>, message: String },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("mix plan: {0}")]
    Plan(String),
    #[error("session: {0}")]
    Session(String),
    #[error("{what}: sample rate {actual} Hz, expected {expected} Hz")]
    RateMismatch { what: String, expected: u32, actual: u32 },
    #[error("voice bank is empty")]
    EmptyVoiceBank,
    #[error("utterance text is empty")]
    EmptyText,
    #[error("synthesized audio is empty or silent")]
    EmptyAudio,
    #[error("bridge {endpoint}: {source}")]
    BridgeTransport {
        endpoint: &'static str,
        #[source]
        source: TransportError,
    },
    #[error("bridge {endpoint}: HTTP {status}: {body}")]
    BridgeStatus {
        endpoint: &'static str,
        status: u16,
        body: String,
    },
    #[error("bridge {endpoint}: malformed response: {message}")]
    BridgeDecode { endpoint: &'static str, message: String },
    #[error("bridge audio declares {declared} Hz, header says {header} Hz, pipeline expects {expected} Hz")]
    SampleRateMismatch { declared: u32, header: u32, expected: u32 },
}

impl From<hound::Error> for SpeechError {
    fn from(e: hound::Error) -> Self {
        SpeechError::Wav {
            path: None,
            message: e.to_string(),
        }
    }
}
