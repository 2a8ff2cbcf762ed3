//! Bridge and chat-gateway clients over real sockets.
//!
//! A small HTTP/1.1 server on 127.0.0.1 wraps the mock bridge logic (or a
//! fake chat endpoint) so the ureq transport, headers, status handling and
//! retries are exercised end to end.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde_json::{json, Value};
use triagesim_core::backend::{AgentBackend, BackendError, ChatMessage, RemoteBackend, RemoteConfig};
use triagesim_core::http::{HttpRequest, HttpTransport, Method, RetryPolicy, UreqTransport};
use triagesim_core::metrics::{cosine_similarity, word_error_rate, Normalizer};
use triagesim_core::prosody::Break;
use triagesim_core::speech::{
    HttpBridge, MockBridge, SpeechBridge, SpeechError, TtsRequest, Waveform, EMBED_DIM, MOCK_QUALITY,
    PIPELINE_SAMPLE_RATE,
};

#[derive(Debug, Clone)]
struct Received {
    method: String,
    path: String,
    headers: Vec<(String, String)>,
    body: String,
}

struct Reply {
    status: u16,
    body: String,
    headers: Vec<(String, String)>,
}

type Handler = dyn Fn(&Received) -> Reply + Send + Sync;

struct Server {
    base: String,
    log: Arc<Mutex<Vec<Received>>>,
}

fn read_request(stream: &mut TcpStream) -> Option<Received> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut line = String::new();
    reader.read_line(&mut line).ok()?;
    let mut parts = line.split_whitespace();
    let method = parts.next()?.to_string();
    let path = parts.next()?.to_string();
    let mut headers = Vec::new();
    let mut length = 0;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).ok()?;
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        let (k, v) = h.split_once(':')?;
        let (k, v) = (k.trim().to_ascii_lowercase(), v.trim().to_string());
        if k == "content-length" {
            length = v.parse().ok()?;
        }
        headers.push((k, v));
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).ok()?;
    Some(Received {
        method,
        path,
        headers,
        body: String::from_utf8(body).ok()?,
    })
}

fn serve(handler: Arc<Handler>) -> Server {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let log = Arc::new(Mutex::new(Vec::new()));
    let seen = log.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let (handler, seen) = (handler.clone(), seen.clone());
            std::thread::spawn(move || {
                if let Some(req) = read_request(&mut stream) {
                    seen.lock().unwrap().push(req.clone());
                    let reply = handler(&req);
                    let mut head = format!(
                        "HTTP/1.1 {} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n",
                        reply.status,
                        reply.body.len()
                    );
                    for (k, v) in &reply.headers {
                        head.push_str(&format!("{k}: {v}\r\n"));
                    }
                    head.push_str("\r\n");
                    let _ = stream.write_all(head.as_bytes());
                    let _ = stream.write_all(reply.body.as_bytes());
                    let _ = stream.flush();
                }
            });
        }
    });
    Server { base, log }
}

fn mock_handler() -> Arc<Handler> {
    Arc::new(|r: &Received| {
        let method = if r.method == "GET" { Method::Get } else { Method::Post };
        let (status, body) = MockBridge.handle(method, &r.path, &r.body);
        Reply {
            status,
            body,
            headers: Vec::new(),
        }
    })
}

fn no_sleep() -> RetryPolicy {
    RetryPolicy::default().with_sleeper(Arc::new(|_| {}))
}

fn bridge(server: &Server) -> HttpBridge {
    HttpBridge::new(server.base.clone(), Arc::new(UreqTransport::default()))
        .with_retry(no_sleep())
        .with_timeout(Duration::from_secs(10))
}

fn reference_clip() -> Waveform {
    let samples = (0..PIPELINE_SAMPLE_RATE / 2)
        .map(|i| 0.3 * (i as f32 * 0.05).sin())
        .collect();
    Waveform::new(PIPELINE_SAMPLE_RATE, samples)
}

fn tts_request(text: &str) -> TtsRequest {
    let wav = reference_clip().to_wav_bytes().unwrap();
    TtsRequest {
        annotated_text: text.into(),
        reference_clip: base64_encode(&wav),
        reference_transcript: "reference words".into(),
        trait_instruction: "calm adult speaker".into(),
    }
}

fn base64_encode(bytes: &[u8]) -> String {
    use base64::Engine;
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

#[test]
fn health_reports_mock_mode() {
    let server = serve(mock_handler());
    let h = bridge(&server).health().unwrap();
    assert_eq!(h.status, "ok");
    assert_eq!(h.mode, "mock");
    assert!(h.model_ids.contains_key("tts"));
    let log = server.log.lock().unwrap();
    assert_eq!((log[0].method.as_str(), log[0].path.as_str()), ("GET", "/v1/health"));
}

#[test]
fn tts_shape_and_asr_round_trip() {
    let server = serve(mock_handler());
    let b = bridge(&server);
    let text = format!("My chest {} hurts, it is about eight out of ten.", Break::Ip.token());
    let audio = b.tts(&tts_request(&text)).unwrap();
    assert_eq!(audio.sample_rate, PIPELINE_SAMPLE_RATE);
    assert!(!audio.is_empty());
    let heard = b.asr(&audio).unwrap();
    let reference = "My chest hurts, it is about eight out of ten.";
    assert_eq!(word_error_rate(reference, &heard, Normalizer::V1).unwrap(), 0.0);
    let log = server.log.lock().unwrap();
    let sent: Value = serde_json::from_str(&log[0].body).unwrap();
    for field in [
        "annotated_text",
        "reference_clip",
        "reference_transcript",
        "trait_instruction",
    ] {
        assert!(sent.get(field).is_some(), "missing {field}");
    }
    assert!(log[0]
        .headers
        .iter()
        .any(|(k, v)| k == "content-type" && v == "application/json"));
}

#[test]
fn embed_is_deterministic_unit_vector() {
    let server = serve(mock_handler());
    let b = bridge(&server);
    let clip = reference_clip();
    let (x, y) = (b.embed(&clip).unwrap(), b.embed(&clip).unwrap());
    assert_eq!(x, y);
    assert_eq!(x.len(), EMBED_DIM);
    let norm: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((norm - 1.0).abs() < 1e-12);
    assert!((cosine_similarity(&x, &y).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn quality_is_fixed_in_mock_mode() {
    let server = serve(mock_handler());
    assert_eq!(bridge(&server).quality(&reference_clip()).unwrap(), MOCK_QUALITY);
    assert_eq!(MOCK_QUALITY, 3.0);
}

#[test]
fn empty_text_is_rejected_with_field_name() {
    let server = serve(mock_handler());
    let response = UreqTransport::default()
        .send(&HttpRequest {
            method: Method::Post,
            url: format!("{}/v1/tts", server.base),
            headers: vec![("content-type".into(), "application/json".into())],
            body: Some(serde_json::to_string(&tts_request(&format!("  {} ", Break::Sb.token()))).unwrap()),
            timeout: Duration::from_secs(10),
        })
        .unwrap();
    assert_eq!(response.status, 422);
    assert!(response.body.contains("annotated_text"));
    // The client refuses before sending.
    assert!(matches!(
        bridge(&server).tts(&tts_request("")),
        Err(SpeechError::EmptyText)
    ));
}

#[test]
fn server_errors_are_retried_then_surfaced() {
    let calls = Arc::new(AtomicUsize::new(0));
    let counter = calls.clone();
    let mock = mock_handler();
    let server = serve(Arc::new(move |r: &Received| {
        if counter.fetch_add(1, Ordering::SeqCst) < 2 {
            Reply {
                status: 500,
                body: json!({"detail": "injected"}).to_string(),
                headers: Vec::new(),
            }
        } else {
            mock(r)
        }
    }));
    assert_eq!(bridge(&server).quality(&reference_clip()).unwrap(), 3.0);
    assert_eq!(calls.load(Ordering::SeqCst), 3);

    let always = serve(Arc::new(|_: &Received| Reply {
        status: 500,
        body: "{}".into(),
        headers: Vec::new(),
    }));
    match bridge(&always).health() {
        Err(SpeechError::BridgeStatus { endpoint, status, .. }) => assert_eq!((endpoint, status), ("health", 500)),
        other => panic!("expected a status error, got {other:?}"),
    }
    assert_eq!(always.log.lock().unwrap().len(), 5);
}

#[test]
fn declared_sample_rate_must_match() {
    let mock = mock_handler();
    let server = serve(Arc::new(move |r: &Received| {
        let mut reply = mock(r);
        if r.path == "/v1/tts" {
            let mut v: Value = serde_json::from_str(&reply.body).unwrap();
            v["sample_rate"] = json!(22050);
            reply.body = v.to_string();
        }
        reply
    }));
    let err = bridge(&server).tts(&tts_request("hello there")).unwrap_err();
    assert!(
        matches!(err, SpeechError::SampleRateMismatch { declared: 22050, .. }),
        "{err}"
    );
}

#[test]
fn unreachable_bridge_is_a_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let b = HttpBridge::new(format!("http://127.0.0.1:{port}"), Arc::new(UreqTransport::default())).with_retry(
        RetryPolicy {
            max_attempts: 1,
            ..no_sleep()
        },
    );
    assert!(matches!(b.health(), Err(SpeechError::BridgeTransport { .. })));
}

fn chat_config(base: &str) -> RemoteConfig {
    RemoteConfig {
        backend_id: "gateway".into(),
        endpoint: format!("{base}/v1"),
        model_id: "chat-model-1".into(),
        api_key_env: None,
        temperature: Some(0.2),
        seed: Some(11),
        max_tokens: Some(64),
        timeout_s: 10,
        requests_per_minute: None,
    }
}

#[test]
fn chat_gateway_round_trip_with_rate_limit() {
    let calls = Arc::new(AtomicUsize::new(0));
    let counter = calls.clone();
    let server = serve(Arc::new(move |_: &Received| {
        if counter.fetch_add(1, Ordering::SeqCst) == 0 {
            Reply {
                status: 429,
                body: "{}".into(),
                headers: vec![("Retry-After".into(), "2".into())],
            }
        } else {
            Reply {
                status: 200,
                body: json!({"choices": [{"message": {"role": "assistant", "content": "{\"acuity\": 2}"}}],
                             "usage": {"prompt_tokens": 5, "completion_tokens": 4}})
                .to_string(),
                headers: Vec::new(),
            }
        }
    }));
    let slept = Arc::new(Mutex::new(Vec::new()));
    let record = slept.clone();
    let backend = RemoteBackend::with_transport(
        chat_config(&server.base),
        Some("secret".into()),
        Arc::new(UreqTransport::default()),
    )
    .with_retry(RetryPolicy::default().with_sleeper(Arc::new(move |d| record.lock().unwrap().push(d))));
    let reply = backend
        .complete("You are a triage nurse.", &[ChatMessage::user("I feel dizzy.")])
        .unwrap();
    assert_eq!(reply, "{\"acuity\": 2}");
    assert_eq!(*slept.lock().unwrap(), [Duration::from_secs(2)]);

    let log = server.log.lock().unwrap();
    assert_eq!(log.len(), 2);
    assert_eq!(log[1].path, "/v1/chat/completions");
    assert!(log[1]
        .headers
        .iter()
        .any(|(k, v)| k == "authorization" && v == "Bearer secret"));
    let body: Value = serde_json::from_str(&log[1].body).unwrap();
    assert_eq!(body["model"], "chat-model-1");
    assert_eq!(body["seed"], 11);
    assert_eq!(body["max_tokens"], 64);
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["content"], "I feel dizzy.");
}

#[test]
fn chat_gateway_client_errors_are_not_retried() {
    let server = serve(Arc::new(|_: &Received| Reply {
        status: 400,
        body: json!({"error": "bad model"}).to_string(),
        headers: Vec::new(),
    }));
    let backend = RemoteBackend::with_transport(chat_config(&server.base), None, Arc::new(UreqTransport::default()))
        .with_retry(no_sleep());
    match backend.complete("sys", &[ChatMessage::user("hi")]) {
        Err(BackendError::Http { status: 400, body }) => assert!(body.contains("bad model")),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(server.log.lock().unwrap().len(), 1);
    assert!(server.log.lock().unwrap()[0]
        .headers
        .iter()
        .all(|(k, _)| k != "authorization"));
}
