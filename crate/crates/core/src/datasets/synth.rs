//! Synthetic scenes: one spectral band per class so the task is separable by construction.
//!
//! - indoor: band-limited noise bursts under 300 Hz
//! - outdoor: steady tone mixtures in 400..2800 Hz with slow tremolo
//! - transportation: windowed linear chirps in 3.5..11.5 kHz

use std::f64::consts::TAU;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{DatasetError, Sample, SceneClass};
use crate::features::{log_mel, AudioClip, LogMelConfig, CLIP_SAMPLES, SAMPLE_RATE};
use crate::rng::{indexed, Stream};

const FS: f64 = SAMPLE_RATE as f64;
const NOISE_FLOOR: f64 = 0.003;

/// Smooth on/off gate with raised-cosine edges.
fn gate(t: usize, start: usize, len: usize, ramp: usize) -> f64 {
    if t < start || t >= start + len {
        return 0.0;
    }
    let d = (t - start).min(start + len - 1 - t);
    if d >= ramp {
        1.0
    } else {
        0.5 - 0.5 * (std::f64::consts::PI * d as f64 / ramp as f64).cos()
    }
}

/// `(start, len)` segments covering the clip with random lengths and gaps.
fn segments(rng: &mut ChaCha8Rng, len_s: (f64, f64), gap_s: (f64, f64)) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut t = (rng.random_range(0.0..gap_s.1) * FS) as usize;
    while t < CLIP_SAMPLES {
        let len = ((rng.random_range(len_s.0..len_s.1) * FS) as usize).min(CLIP_SAMPLES - t);
        out.push((t, len));
        t += len + (rng.random_range(gap_s.0..gap_s.1) * FS) as usize;
    }
    out
}

fn low_band_bursts(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let parts: Vec<(f64, f64, f64)> = (0..16)
        .map(|_| (rng.random_range(30.0..260.0), rng.random_range(0.0..TAU), rng.random_range(0.2..1.0)))
        .collect();
    let bursts = segments(rng, (0.4, 1.5), (0.1, 0.6));
    let ramp = (0.05 * FS) as usize;
    let mut out = vec![0.0; CLIP_SAMPLES];
    for (f, phase, amp) in parts {
        // Phasor recurrence instead of a sin() per sample.
        let step = (TAU * f / FS).sin_cos();
        let (mut s, mut c) = phase.sin_cos();
        for v in out.iter_mut() {
            *v += amp * s;
            (s, c) = (s * step.1 + c * step.0, c * step.1 - s * step.0);
        }
    }
    for (t, v) in out.iter_mut().enumerate() {
        *v *= bursts.iter().map(|&(s, l)| gate(t, s, l, ramp)).sum::<f64>();
    }
    out
}

fn mid_band_tones(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = rng.random_range(3..=5);
    let mut out = vec![0.0; CLIP_SAMPLES];
    for _ in 0..n {
        let f = rng.random_range(400.0..2800.0);
        let phase = rng.random_range(0.0..TAU);
        let amp = rng.random_range(0.3..1.0);
        let trem_f = rng.random_range(0.5..2.0);
        let trem_phase = rng.random_range(0.0..TAU);
        for (t, v) in out.iter_mut().enumerate() {
            let time = t as f64 / FS;
            let env = 1.0 + 0.3 * (TAU * trem_f * time + trem_phase).sin();
            *v += amp * env * (TAU * f * time + phase).sin();
        }
    }
    out
}

fn high_band_chirps(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = vec![0.0; CLIP_SAMPLES];
    for (start, len) in segments(rng, (0.2, 0.8), (0.05, 0.3)) {
        let f0 = rng.random_range(3500.0..11_500.0);
        let f1 = rng.random_range(3500.0..11_500.0);
        let amp = rng.random_range(0.4..1.0);
        let mut phase = rng.random_range(0.0..TAU);
        for i in 0..len {
            let frac = i as f64 / len as f64;
            let window = 0.5 - 0.5 * (TAU * frac).cos();
            out[start + i] += amp * window * phase.sin();
            phase += TAU * (f0 + (f1 - f0) * frac) / FS;
        }
    }
    out
}

/// Clip `index` of `class` for run `seed`; identical arguments give identical samples.
pub fn synth_clip(class: SceneClass, index: usize, seed: u64) -> AudioClip {
    let mut rng = indexed(seed, Stream::Synth, (class.index() * 1_000_000 + index) as u64);
    let signal = match class {
        SceneClass::Indoor => low_band_bursts(&mut rng),
        SceneClass::Outdoor => mid_band_tones(&mut rng),
        SceneClass::Transportation => high_band_chirps(&mut rng),
    };
    let peak = signal.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let level = rng.random_range(0.1..0.6) / peak;
    let samples = signal
        .iter()
        .map(|&v| (v * level + rng.random_range(-NOISE_FLOOR..NOISE_FLOOR)) as f32)
        .collect();
    let source = format!("synthetic/{}/{index:04}", class.name());
    AudioClip::new(samples, SAMPLE_RATE, Some(class), source).expect("synthetic clips are 48 kHz")
}

/// `n_per_class` clips per class, class-major order.
pub fn synth_dataset(n_per_class: usize, seed: u64) -> Result<Vec<AudioClip>, DatasetError> {
    if n_per_class == 0 {
        return Err(DatasetError::Invalid("n_per_class must be at least 1".into()));
    }
    Ok(SceneClass::ALL
        .iter()
        .flat_map(|&c| (0..n_per_class).map(move |i| (c, i)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(c, i)| synth_clip(c, i, seed))
        .collect())
}

/// Featurized synthetic corpus, generated clip by clip so raw audio is never all resident.
pub fn synth_samples(n_per_class: usize, seed: u64, cfg: &LogMelConfig) -> Result<Vec<Sample>, DatasetError> {
    if n_per_class == 0 {
        return Err(DatasetError::Invalid("n_per_class must be at least 1".into()));
    }
    let jobs: Vec<(SceneClass, usize)> = SceneClass::ALL
        .iter()
        .flat_map(|&c| (0..n_per_class).map(move |i| (c, i)))
        .collect();
    jobs.into_par_iter()
        .map(|(c, i)| {
            let clip = synth_clip(c, i, seed);
            Ok(Sample {
                features: log_mel(&clip, cfg)?,
                label: c,
                source: clip.source_path,
            })
        })
        .collect()
}
