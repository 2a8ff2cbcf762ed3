//! `init-demo`: a small self-contained project that runs offline against the
//! simulated agents and the mock bridge.
//!
//! Voice and noise clips are synthetic tones; they stand in for recorded
//! speakers and ED recordings, which are not redistributable.

use std::f32::consts::TAU;
use std::path::Path;

use serde_json::json;
use triagesim_core::case::to_jsonl;
use triagesim_core::persona::{Country, Gender};
use triagesim_core::speech::{NoiseAsset, NoiseCategory, NoiseKind, VoiceRef, Waveform, PIPELINE_SAMPLE_RATE};

use crate::error::CliError;

pub const DEMO_CONFIG: &str = r#"seed = 20240611
output_dir = "corpus"
conversations_per_case = 2

[inputs]
expert_annotations = "data/red_flags.jsonl"

[[inputs.cases]]
path = "data/mimic.jsonl"
source = "mimic"

[[inputs.cases]]
path = "data/esi_handbook.jsonl"
source = "esi_handbook"

[[inputs.cases]]
path = "data/etek.jsonl"
source = "etek"

[speech]
bridge_url = "mock"
voices = "voices/voices.jsonl"
noise = "noise/noise.jsonl"

[classify]
modalities = ["syn", "asr"]
"#;

struct DemoCase {
    id: &'static str,
    complaint: &'static str,
    vitals: [f64; 6],
    pain: u8,
    acuity: u8,
    flags: &'static [&'static str],
}

// Vitals: temperature, heart rate, respiratory rate, systolic, diastolic, SpO2.
const MIMIC: &[DemoCase] = &[
    DemoCase {
        id: "mimic-001",
        complaint: "crushing chest pain radiating to the left arm",
        vitals: [36.9, 118.0, 24.0, 92.0, 58.0, 91.0],
        pain: 9,
        acuity: 2,
        flags: &["cardiac_chest_pain", "severe_pain"],
    },
    DemoCase {
        id: "mimic-002",
        complaint: "sprained ankle after a fall",
        vitals: [36.7, 84.0, 16.0, 128.0, 80.0, 99.0],
        pain: 5,
        acuity: 4,
        flags: &[],
    },
    DemoCase {
        id: "mimic-003",
        complaint: "fever and shortness of breath",
        vitals: [39.4, 124.0, 28.0, 96.0, 60.0, 89.0],
        pain: 3,
        acuity: 2,
        flags: &["hypoxia", "sepsis_signs"],
    },
    DemoCase {
        id: "mimic-004",
        complaint: "sore throat for three days",
        vitals: [37.6, 80.0, 14.0, 122.0, 76.0, 99.0],
        pain: 2,
        acuity: 5,
        flags: &[],
    },
];

const ESI_HANDBOOK: &[DemoCase] = &[
    DemoCase {
        id: "esi-001",
        complaint: "sudden weakness on the right side and slurred speech",
        vitals: [36.8, 96.0, 18.0, 186.0, 104.0, 96.0],
        pain: 1,
        acuity: 1,
        flags: &["stroke_symptoms"],
    },
    DemoCase {
        id: "esi-002",
        complaint: "abdominal pain and vomiting since this morning",
        vitals: [37.9, 102.0, 20.0, 118.0, 74.0, 98.0],
        pain: 7,
        acuity: 3,
        flags: &["severe_pain"],
    },
    DemoCase {
        id: "esi-003",
        complaint: "cut on the finger while cooking",
        vitals: [36.6, 76.0, 14.0, 124.0, 78.0, 100.0],
        pain: 3,
        acuity: 5,
        flags: &[],
    },
];

const ETEK: &[DemoCase] = &[
    DemoCase {
        id: "etek-001",
        complaint: "headache and new confusion",
        vitals: [38.2, 110.0, 22.0, 104.0, 66.0, 94.0],
        pain: 6,
        acuity: 2,
        flags: &["altered_mental_status"],
    },
    DemoCase {
        id: "etek-002",
        complaint: "back pain after lifting a box",
        vitals: [36.8, 88.0, 16.0, 134.0, 84.0, 98.0],
        pain: 6,
        acuity: 4,
        flags: &[],
    },
    DemoCase {
        id: "etek-003",
        complaint: "wheezing and cough",
        vitals: [37.2, 104.0, 24.0, 130.0, 82.0, 93.0],
        pain: 2,
        acuity: 3,
        flags: &[],
    },
];

fn case_line(c: &DemoCase) -> serde_json::Value {
    let [t, hr, rr, sbp, dbp, spo2] = c.vitals;
    json!({
        "case_id": c.id,
        "chief_complaint": c.complaint,
        "vitals": {
            "temperature": t, "heart_rate": hr, "respiratory_rate": rr,
            "systolic_bp": sbp, "diastolic_bp": dbp, "o2_saturation": spo2
        },
        "pain_score": c.pain,
        "ground_truth_acuity": c.acuity,
    })
}

/// A short tone chord; each voice gets its own pitch.
fn tone(freq: f32, seconds: f32, amplitude: f32) -> Waveform {
    let rate = PIPELINE_SAMPLE_RATE as f32;
    let n = (seconds * rate) as usize;
    let samples = (0..n)
        .map(|i| {
            let t = i as f32 / rate;
            amplitude
                * (0.6 * (TAU * freq * t).sin()
                    + 0.3 * (TAU * 2.0 * freq * t).sin()
                    + 0.1 * (TAU * 3.0 * freq * t).sin())
        })
        .collect();
    Waveform::new(PIPELINE_SAMPLE_RATE, samples)
}

/// Deterministic broadband hiss from an xorshift generator.
fn hiss(seconds: f32, amplitude: f32, mut state: u32) -> Waveform {
    let n = (seconds * PIPELINE_SAMPLE_RATE as f32) as usize;
    let samples = (0..n)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 17;
            state ^= state << 5;
            amplitude * (state as f32 / u32::MAX as f32 * 2.0 - 1.0)
        })
        .collect();
    Waveform::new(PIPELINE_SAMPLE_RATE, samples)
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn write_wave(path: &Path, wave: &Waveform) -> Result<(), CliError> {
    let bytes = wave.to_wav_bytes().map_err(|e| CliError::Stage(e.to_string()))?;
    write(path, &bytes)
}

/// Writes the demo project into `dir`. Refuses to overwrite an existing config.
pub fn init_demo(dir: &Path) -> Result<(), CliError> {
    let config = dir.join("config.toml");
    if config.exists() {
        return Err(CliError::Config(format!("{} already exists", config.display())));
    }
    for (file, cases) in [("mimic", MIMIC), ("esi_handbook", ESI_HANDBOOK), ("etek", ETEK)] {
        let lines: Vec<_> = cases.iter().map(case_line).collect();
        write(&dir.join(format!("data/{file}.jsonl")), to_jsonl(&lines).as_bytes())?;
    }
    let annotations: Vec<_> = [MIMIC, ESI_HANDBOOK, ETEK]
        .into_iter()
        .flatten()
        .flat_map(|c| (0..2).map(move |k| json!({"conversation_id": format!("{}-{k:02}", c.id), "red_flags": c.flags})))
        .collect();
    write(&dir.join("data/red_flags.jsonl"), to_jsonl(&annotations).as_bytes())?;

    let mut voices = Vec::new();
    let mut freq = 110.0;
    for country in Country::ALL {
        for gender in Gender::ALL {
            let id = format!(
                "{}-{}",
                serde_json::to_value(country).unwrap().as_str().unwrap(),
                match gender {
                    Gender::Female => "f",
                    Gender::Male => "m",
                }
            );
            let clip = format!("clips/{id}.wav");
            write_wave(&dir.join("voices").join(&clip), &tone(freq, 1.5, 0.3))?;
            freq *= 1.19;
            voices.push(VoiceRef {
                voice_id: id,
                country_of_origin: country,
                gender,
                clip_path: clip.into(),
                transcript: "The quick brown fox jumps over the lazy dog.".into(),
            });
        }
    }
    write(&dir.join("voices/voices.jsonl"), to_jsonl(&voices).as_bytes())?;

    let mut noise = vec![NoiseAsset {
        asset_id: "ward-hum".into(),
        kind: NoiseKind::Ambient,
        category: None,
        path: "ward-hum.wav".into(),
    }];
    write_wave(&dir.join("noise/ward-hum.wav"), &hiss(4.0, 0.5, 0x9e37_79b9))?;
    let events = [
        (NoiseCategory::KeyboardTyping, 0.0, 0x1234_5678),
        (NoiseCategory::TelephoneRinging, 440.0, 0),
        (NoiseCategory::InfantCrying, 520.0, 0),
        (NoiseCategory::AmbulanceSiren, 700.0, 0),
    ];
    for (category, freq, seed) in events {
        let id = category.to_string();
        let wave = if seed != 0 {
            hiss(0.8, 0.6, seed)
        } else {
            tone(freq, 1.2, 0.6)
        };
        write_wave(&dir.join(format!("noise/{id}.wav")), &wave)?;
        noise.push(NoiseAsset {
            asset_id: id.clone(),
            kind: NoiseKind::Event,
            category: Some(category),
            path: format!("{id}.wav").into(),
        });
    }
    write(&dir.join("noise/noise.jsonl"), to_jsonl(&noise).as_bytes())?;
    write(&config, DEMO_CONFIG.as_bytes())
}
