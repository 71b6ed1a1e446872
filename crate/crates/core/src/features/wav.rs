use std::path::Path;

use hound::{SampleFormat, WavReader};

use super::{FeatureError, CLIP_SAMPLES, SAMPLE_RATE};
use crate::datasets::SceneClass;

/// Mono audio at 48 kHz, normalized to exactly ten seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub label: Option<SceneClass>,
    pub source_path: String,
}

impl AudioClip {
    /// Wraps raw samples, zero-padding or truncating to [`CLIP_SAMPLES`].
    pub fn new(mut samples: Vec<f32>, sample_rate: u32, label: Option<SceneClass>, source: impl Into<String>) -> Result<Self, FeatureError> {
        if sample_rate != SAMPLE_RATE {
            return Err(FeatureError::SampleRate(sample_rate));
        }
        samples.resize(CLIP_SAMPLES, 0.0);
        Ok(Self {
            samples,
            sample_rate,
            label,
            source_path: source.into(),
        })
    }
}

/// Reads a 16- or 24-bit PCM RIFF/WAVE file, averaging channels down to mono.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip, FeatureError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let reader = WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => FeatureError::Io { path: shown.clone(), source: io },
        other => FeatureError::Wav { path: shown.clone(), msg: other.to_string() },
    })?;
    let spec = reader.spec();
    if spec.sample_format != SampleFormat::Int || !matches!(spec.bits_per_sample, 16 | 24) {
        return Err(FeatureError::UnsupportedCodec {
            path: shown,
            detail: format!("{:?} {}-bit", spec.sample_format, spec.bits_per_sample),
        });
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(FeatureError::SampleRate(spec.sample_rate));
    }
    let channels = spec.channels as usize;
    if channels == 0 || channels > 2 {
        return Err(FeatureError::UnsupportedCodec {
            path: shown,
            detail: format!("{channels} channels"),
        });
    }
    let scale = 1.0 / (1i64 << (spec.bits_per_sample - 1)) as f64;
    let raw: Vec<i32> = reader
        .into_samples::<i32>()
        .collect::<Result<_, _>>()
        .map_err(|e| FeatureError::Wav { path: shown.clone(), msg: e.to_string() })?;
    let mono = raw
        .chunks(channels)
        .map(|frame| {
            let sum: f64 = frame.iter().map(|&s| s as f64 * scale).sum();
            (sum / channels as f64) as f32
        })
        .collect();
    AudioClip::new(mono, spec.sample_rate, None, shown)
}
