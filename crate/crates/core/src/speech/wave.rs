use std::io::Cursor;
use std::path::Path;

use hound::{SampleFormat, WavSpec};
use serde::{Deserialize, Serialize};

use super::SpeechError;

/// Pipeline sample rate for every clip, asset and session.
pub const PIPELINE_SAMPLE_RATE: u32 = 24_000;

/// Mono floating-point audio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    pub sample_rate: u32,
    pub samples: Vec<f32>,
}

impl Waveform {
    pub fn new(sample_rate: u32, samples: Vec<f32>) -> Self {
        Self { sample_rate, samples }
    }

    pub fn silence(sample_rate: u32, len: usize) -> Self {
        Self::new(sample_rate, vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }

    /// Linear-interpolation resampling. A no-op at the same rate.
    pub fn resampled(&self, target_rate: u32) -> Waveform {
        if target_rate == self.sample_rate || self.samples.is_empty() {
            return Waveform::new(target_rate, self.samples.clone());
        }
        let ratio = f64::from(self.sample_rate) / f64::from(target_rate);
        let out_len = ((self.samples.len() as f64) / ratio).round().max(1.0) as usize;
        let last = self.samples.len() - 1;
        let samples = (0..out_len)
            .map(|i| {
                let pos = i as f64 * ratio;
                let j = (pos.floor() as usize).min(last);
                let frac = (pos - j as f64) as f32;
                let a = self.samples[j];
                let b = self.samples[(j + 1).min(last)];
                a + (b - a) * frac
            })
            .collect();
        Waveform::new(target_rate, samples)
    }

    /// 16-bit PCM mono WAV bytes. Samples are clamped to [-1, 1].
    pub fn to_wav_bytes(&self) -> Result<Vec<u8>, SpeechError> {
        let mut cursor = Cursor::new(Vec::new());
        {
            let mut writer = hound::WavWriter::new(&mut cursor, pcm16_spec(self.sample_rate))?;
            for &s in &self.samples {
                writer.write_sample(to_i16(s))?;
            }
            writer.finalize()?;
        }
        Ok(cursor.into_inner())
    }

    /// Decodes any PCM or float WAV, downmixing to mono.
    pub fn from_wav_bytes(bytes: &[u8]) -> Result<Waveform, SpeechError> {
        let reader = hound::WavReader::new(Cursor::new(bytes))?;
        decode(reader)
    }

    pub fn read_wav(path: &Path) -> Result<Waveform, SpeechError> {
        let reader = hound::WavReader::open(path).map_err(|e| SpeechError::Wav {
            path: Some(path.to_path_buf()),
            message: e.to_string(),
        })?;
        decode(reader)
    }

    pub fn write_wav(&self, path: &Path) -> Result<(), SpeechError> {
        let bytes = self.to_wav_bytes()?;
        std::fs::write(path, bytes).map_err(|e| SpeechError::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }

    /// Round-trips through 16-bit PCM, as written to disk.
    pub fn quantized(&self) -> Waveform {
        Waveform::new(
            self.sample_rate,
            self.samples
                .iter()
                .map(|&s| f32::from(to_i16(s)) / f32::from(i16::MAX))
                .collect(),
        )
    }
}

pub fn rms(samples: &[f32]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let sum: f64 = samples.iter().map(|&s| f64::from(s) * f64::from(s)).sum();
    (sum / samples.len() as f64).sqrt()
}

fn pcm16_spec(sample_rate: u32) -> WavSpec {
    WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    }
}

fn to_i16(s: f32) -> i16 {
    (s.clamp(-1.0, 1.0) * f32::from(i16::MAX)).round() as i16
}

/// Sample rate declared in a WAV header.
pub fn wav_header_rate(bytes: &[u8]) -> Result<u32, SpeechError> {
    Ok(hound::WavReader::new(Cursor::new(bytes))?.spec().sample_rate)
}

fn decode<R: std::io::Read>(mut reader: hound::WavReader<R>) -> Result<Waveform, SpeechError> {
    let spec = reader.spec();
    let channels = usize::from(spec.channels.max(1));
    let interleaved: Vec<f32> = match spec.sample_format {
        SampleFormat::Float => reader.samples::<f32>().collect::<Result<_, _>>()?,
        SampleFormat::Int => {
            let scale = ((1i64 << (spec.bits_per_sample - 1)) - 1) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| (v as f32 / scale).max(-1.0)))
                .collect::<Result<_, _>>()?
        }
    };
    let samples = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f32>() / channels as f32)
        .collect();
    Ok(Waveform::new(spec.sample_rate, samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wav_round_trip_within_quantization() {
        let w = Waveform::new(24_000, (0..480).map(|i| (i as f32 / 480.0) - 0.5).collect());
        let bytes = w.to_wav_bytes().unwrap();
        assert_eq!(wav_header_rate(&bytes).unwrap(), 24_000);
        let back = Waveform::from_wav_bytes(&bytes).unwrap();
        assert_eq!(back.len(), w.len());
        for (a, b) in w.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() < 1.0 / 32_000.0);
        }
        assert_eq!(back, w.quantized());
    }

    #[test]
    fn stereo_is_downmixed() {
        let mut cursor = Cursor::new(Vec::new());
        {
            let spec = WavSpec {
                channels: 2,
                ..pcm16_spec(16_000)
            };
            let mut wr = hound::WavWriter::new(&mut cursor, spec).unwrap();
            for _ in 0..10 {
                wr.write_sample(16_384i16).unwrap();
                wr.write_sample(0i16).unwrap();
            }
            wr.finalize().unwrap();
        }
        let w = Waveform::from_wav_bytes(&cursor.into_inner()).unwrap();
        assert_eq!(w.len(), 10);
        assert!((w.samples[0] - 0.25).abs() < 1e-4);
    }

    #[test]
    fn resampling_scales_length_and_keeps_dc() {
        let w = Waveform::new(16_000, vec![0.5; 16_000]);
        let r = w.resampled(24_000);
        assert_eq!(r.len(), 24_000);
        assert!(r.samples.iter().all(|s| (s - 0.5).abs() < 1e-6));
        assert_eq!(w.resampled(16_000), w);
    }

    #[test]
    fn rms_of_unit_sine() {
        let w = Waveform::new(
            24_000,
            (0..24_000)
                .map(|i| (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 24_000.0).sin() as f32)
                .collect(),
        );
        assert!((w.rms() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-4);
    }
}
