use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::FeatureError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    /// Periodic Hann, `0.5 − 0.5·cos(2πn/N)`.
    Hann,
    Rectangular,
}

impl Window {
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
                .collect(),
            Window::Rectangular => vec![1.0; n],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub window: Window,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            n_fft: 2048,
            hop: 750,
            window: Window::Hann,
        }
    }
}

impl StftConfig {
    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Reflective padding `(left, right)`: frames are centred on multiples of `hop` that
    /// fall inside the signal, so a signal of `len` samples yields `⌊len / hop⌋` frames.
    pub fn padding(&self) -> (usize, usize) {
        let half = self.n_fft / 2;
        (half, half.saturating_sub(self.hop))
    }

    /// `1 + ⌊(padded_len − n_fft) / hop⌋`.
    pub fn frame_count(&self, len: usize) -> usize {
        let (l, r) = self.padding();
        1 + (len + l + r - self.n_fft) / self.hop
    }

    fn validate(&self) -> Result<(), FeatureError> {
        if !self.n_fft.is_power_of_two() || self.n_fft < 2 || self.hop == 0 {
            return Err(FeatureError::InvalidConfig(format!(
                "n_fft must be a power of two and hop positive, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// `|DFT|²` per frame, `[frames, n_fft/2 + 1]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrogram {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<f64>,
}

impl PowerSpectrogram {
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }
}

fn reflect(samples: &[f32], left: usize, right: usize) -> Vec<f64> {
    let n = samples.len() as isize;
    (-(left as isize)..n + right as isize)
        .map(|i| {
            let j = if i < 0 {
                -i
            } else if i >= n {
                2 * (n - 1) - i
            } else {
                i
            };
            samples[j as usize] as f64
        })
        .collect()
}

pub fn stft_power(samples: &[f32], cfg: &StftConfig) -> Result<PowerSpectrogram, FeatureError> {
    cfg.validate()?;
    if samples.len() < cfg.n_fft {
        return Err(FeatureError::TooShort {
            len: samples.len(),
            n_fft: cfg.n_fft,
        });
    }
    let (left, right) = cfg.padding();
    let padded = reflect(samples, left, right);
    let frames = cfg.frame_count(samples.len());
    let bins = cfg.bins();
    let window = cfg.window.coefficients(cfg.n_fft);
    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(cfg.n_fft);

    let mut data = vec![0.0; frames * bins];
    data.par_chunks_mut(bins).enumerate().for_each(|(t, out)| {
        let start = t * cfg.hop;
        let mut buf: Vec<Complex<f64>> = padded[start..start + cfg.n_fft]
            .iter()
            .zip(&window)
            .map(|(&s, &w)| Complex::new(s * w, 0.0))
            .collect();
        fft.process(&mut buf);
        for (o, c) in out.iter_mut().zip(&buf) {
            *o = c.norm_sqr();
        }
    });
    Ok(PowerSpectrogram { frames, bins, data })
}
