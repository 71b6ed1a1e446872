//! WAV ingestion and log-mel extraction for the 640×64 network input.

mod cache;
mod mel;
mod stft;
mod wav;

pub use cache::{read_cache, write_cache, CACHE_MAGIC, CACHE_VERSION};
pub use mel::{hz_to_mel, mel_to_hz, MelFilterbank};
pub use stft::{stft_power, PowerSpectrogram, StftConfig, Window};
pub use wav::{load_wav, AudioClip};

use thiserror::Error;

use crate::tensor::Tensor;

pub const SAMPLE_RATE: u32 = 48_000;
/// Ten seconds at 48 kHz.
pub const CLIP_SAMPLES: usize = 480_000;
pub const FRAMES: usize = 640;
pub const MEL_BINS: usize = 64;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: corrupt or unreadable WAV: {msg}")]
    Wav { path: String, msg: String },
    #[error("{path}: unsupported codec ({detail}); only 16/24-bit integer PCM mono or stereo")]
    UnsupportedCodec { path: String, detail: String },
    #[error("sample rate {0} Hz is not supported (expected 48000, resampling is not implemented)")]
    SampleRate(u32),
    #[error("clip of {len} samples is shorter than n_fft = {n_fft}")]
    TooShort { len: usize, n_fft: usize },
    #[error("invalid feature config: {0}")]
    InvalidConfig(String),
    #[error("mel filter {index} covers no FFT bin; reduce mel_bins or raise n_fft")]
    EmptyFilter { index: usize },
    #[error("features are {frames}×{bins}, expected {expected_frames}×{expected_bins}")]
    Geometry {
        frames: usize,
        bins: usize,
        expected_frames: usize,
        expected_bins: usize,
    },
    #[error("{path}: feature cache: {msg}")]
    Cache { path: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogMelConfig {
    pub stft: StftConfig,
    pub sample_rate: u32,
    pub mel_bins: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl Default for LogMelConfig {
    fn default() -> Self {
        Self {
            stft: StftConfig::default(),
            sample_rate: SAMPLE_RATE,
            mel_bins: MEL_BINS,
            fmin: 0.0,
            fmax: 24_000.0,
            log_floor: 1e-10,
        }
    }
}

impl LogMelConfig {
    pub fn filterbank(&self) -> Result<MelFilterbank, FeatureError> {
        MelFilterbank::new(self.stft.n_fft, self.sample_rate, self.mel_bins, self.fmin, self.fmax)
    }
}

/// Log-mel map `[1, frames, mel_bins]` (time along rows, mel along columns).
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub values: Tensor<f32>,
    pub frame_hop: usize,
    pub n_fft: usize,
    pub mel_bins: usize,
    pub log_floor: f64,
}

impl MelSpectrogram {
    pub fn from_values(values: Tensor<f32>, cfg: &LogMelConfig) -> Self {
        Self {
            values,
            frame_hop: cfg.stft.hop,
            n_fft: cfg.stft.n_fft,
            mel_bins: cfg.mel_bins,
            log_floor: cfg.log_floor,
        }
    }

    pub fn frames(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn bins(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn get(&self, t: usize, m: usize) -> f32 {
        self.values.data()[t * self.bins() + m]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.values.data().chunks(self.bins())
    }

    pub fn with_values(&self, data: Vec<f32>) -> Self {
        Self {
            values: Tensor::from_vec(self.values.shape().to_vec(), data).expect("same geometry"),
            ..self.clone()
        }
    }
}

/// Mel-band power per frame, `[frames, mel_bins]` row-major, before the logarithm.
pub fn mel_power(samples: &[f32], cfg: &LogMelConfig) -> Result<(usize, Vec<f64>), FeatureError> {
    let bank = cfg.filterbank()?;
    let spec = stft_power(samples, &cfg.stft)?;
    let mut out = vec![0.0; spec.frames * cfg.mel_bins];
    for (t, row) in out.chunks_mut(cfg.mel_bins).enumerate() {
        bank.apply(spec.frame(t), row);
    }
    Ok((spec.frames, out))
}

/// `log(mel_power + log_floor)` over a ten-second clip, checked against the 640×64 geometry.
pub fn log_mel(clip: &AudioClip, cfg: &LogMelConfig) -> Result<MelSpectrogram, FeatureError> {
    if clip.sample_rate != cfg.sample_rate {
        return Err(FeatureError::SampleRate(clip.sample_rate));
    }
    let (frames, power) = mel_power(&clip.samples, cfg)?;
    if frames != FRAMES || cfg.mel_bins != MEL_BINS {
        return Err(FeatureError::Geometry {
            frames,
            bins: cfg.mel_bins,
            expected_frames: FRAMES,
            expected_bins: MEL_BINS,
        });
    }
    let data = power.iter().map(|&p| (p + cfg.log_floor).ln() as f32).collect();
    let values = Tensor::from_vec([1, frames, cfg.mel_bins], data).expect("geometry checked");
    Ok(MelSpectrogram::from_values(values, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silent_clip_sits_on_the_floor() {
        let clip = AudioClip::new(vec![0.0; CLIP_SAMPLES], SAMPLE_RATE, None, "mem").unwrap();
        let m = log_mel(&clip, &LogMelConfig::default()).unwrap();
        assert_eq!(m.values.shape(), &[1, 640, 64]);
        let floor = (1e-10f64).ln() as f32;
        assert!(m.values.data().iter().all(|&v| v == floor));
    }

    #[test]
    fn non_default_geometry_is_rejected() {
        let clip = AudioClip::new(vec![0.0; CLIP_SAMPLES], SAMPLE_RATE, None, "mem").unwrap();
        let cfg = LogMelConfig {
            stft: StftConfig { hop: 512, ..StftConfig::default() },
            ..LogMelConfig::default()
        };
        assert!(matches!(log_mel(&clip, &cfg), Err(FeatureError::Geometry { .. })));
    }
}
