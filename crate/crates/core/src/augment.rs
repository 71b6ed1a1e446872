//! Frequency and time masking on log-mel maps.

use rand::Rng;
use thiserror::Error;

use crate::features::MelSpectrogram;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AugmentError {
    #[error("invalid SpecAugment config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskValue {
    /// Mean of the map being augmented.
    Mean,
    Constant(f32),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpecAugmentConfig {
    /// Maximum frequency-mask width F, in mel bins.
    pub freq_mask_param: usize,
    pub num_freq_masks: usize,
    /// Maximum time-mask width T, in frames.
    pub time_mask_param: usize,
    pub num_time_masks: usize,
    pub mask_value: MaskValue,
}

impl Default for SpecAugmentConfig {
    fn default() -> Self {
        Self {
            freq_mask_param: 16,
            num_freq_masks: 2,
            time_mask_param: 80,
            num_time_masks: 2,
            mask_value: MaskValue::Mean,
        }
    }
}

impl SpecAugmentConfig {
    pub fn disabled() -> Self {
        Self {
            freq_mask_param: 0,
            num_freq_masks: 0,
            time_mask_param: 0,
            num_time_masks: 0,
            mask_value: MaskValue::Mean,
        }
    }

    /// Checks the mask widths against a `frames × bins` map.
    pub fn validate(&self, frames: usize, bins: usize) -> Result<(), AugmentError> {
        if self.freq_mask_param > bins {
            return Err(AugmentError::InvalidConfig(format!(
                "freq_mask_param {} exceeds {bins} mel bins",
                self.freq_mask_param
            )));
        }
        if self.time_mask_param > frames {
            return Err(AugmentError::InvalidConfig(format!(
                "time_mask_param {} exceeds {frames} frames",
                self.time_mask_param
            )));
        }
        if let MaskValue::Constant(v) = self.mask_value {
            if !v.is_finite() {
                return Err(AugmentError::InvalidConfig("mask value must be finite".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Columns (mel bins).
    Freq,
    /// Rows (frames).
    Time,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mask {
    pub axis: Axis,
    pub start: usize,
    pub width: usize,
}

/// Frequency masks first, then time masks; width `~ U{0..=param}`, start `~ U{0..=dim−width}`.
pub fn sample_masks<R: Rng + ?Sized>(cfg: &SpecAugmentConfig, frames: usize, bins: usize, rng: &mut R) -> Vec<Mask> {
    let mut draw = |axis, param: usize, dim: usize| {
        let width = rng.random_range(0..=param);
        let start = rng.random_range(0..=dim - width);
        Mask { axis, start, width }
    };
    let mut masks = Vec::with_capacity(cfg.num_freq_masks + cfg.num_time_masks);
    for _ in 0..cfg.num_freq_masks {
        masks.push(draw(Axis::Freq, cfg.freq_mask_param, bins));
    }
    for _ in 0..cfg.num_time_masks {
        masks.push(draw(Axis::Time, cfg.time_mask_param, frames));
    }
    masks
}

/// Writes `value` into every masked cell of a row-major `frames × bins` map.
pub fn apply_masks(data: &mut [f32], frames: usize, bins: usize, masks: &[Mask], value: f32) {
    debug_assert_eq!(data.len(), frames * bins);
    for m in masks {
        match m.axis {
            Axis::Freq => {
                for row in data.chunks_mut(bins) {
                    row[m.start..m.start + m.width].fill(value);
                }
            }
            Axis::Time => data[m.start * bins..(m.start + m.width) * bins].fill(value),
        }
    }
}

pub fn mask_fill(data: &[f32], value: MaskValue) -> f32 {
    match value {
        MaskValue::Mean => (data.iter().map(|&v| v as f64).sum::<f64>() / data.len() as f64) as f32,
        MaskValue::Constant(v) => v,
    }
}

/// In-place masking of a raw `frames × bins` map; returns the masks drawn.
pub fn augment_slice<R: Rng + ?Sized>(
    data: &mut [f32],
    frames: usize,
    bins: usize,
    cfg: &SpecAugmentConfig,
    rng: &mut R,
) -> Result<Vec<Mask>, AugmentError> {
    cfg.validate(frames, bins)?;
    let value = mask_fill(data, cfg.mask_value);
    let masks = sample_masks(cfg, frames, bins, rng);
    apply_masks(data, frames, bins, &masks, value);
    Ok(masks)
}

/// Returns a masked copy; the input map is untouched.
pub fn spec_augment<R: Rng + ?Sized>(
    x: &MelSpectrogram,
    cfg: &SpecAugmentConfig,
    rng: &mut R,
) -> Result<MelSpectrogram, AugmentError> {
    let (frames, bins) = (x.frames(), x.bins());
    let mut data = x.values.data().to_vec();
    augment_slice(&mut data, frames, bins, cfg, rng)?;
    Ok(x.with_values(data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::LogMelConfig;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ones() -> MelSpectrogram {
        let t = Tensor::full([1, 640, 64], 1.0f32).unwrap();
        MelSpectrogram::from_values(t, &LogMelConfig::default())
    }

    #[test]
    fn disabled_config_is_identity() {
        let x = ones();
        let y = spec_augment(&x, &SpecAugmentConfig::disabled(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(x, y);
        let zero_width = SpecAugmentConfig {
            freq_mask_param: 0,
            time_mask_param: 0,
            mask_value: MaskValue::Constant(-5.0),
            ..SpecAugmentConfig::default()
        };
        let y = spec_augment(&x, &zero_width, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn forced_frequency_mask_counts() {
        let x = ones();
        let mut data = x.values.data().to_vec();
        let m = Mask { axis: Axis::Freq, start: 10, width: 8 };
        apply_masks(&mut data, 640, 64, &[m], 0.0);
        assert_eq!(data.iter().filter(|&&v| v == 0.0).count(), 640 * 8);
        assert_eq!(data.iter().filter(|&&v| v == 1.0).count(), 640 * 56);
        assert!(data.chunks(64).all(|r| r[10..18].iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn oversize_masks_are_rejected() {
        let cfg = SpecAugmentConfig { freq_mask_param: 65, ..SpecAugmentConfig::default() };
        assert!(spec_augment(&ones(), &cfg, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        let cfg = SpecAugmentConfig { time_mask_param: 641, ..SpecAugmentConfig::default() };
        assert!(cfg.validate(640, 64).is_err());
    }

    #[test]
    fn mean_fill_uses_the_input_map() {
        let data = vec![1.0, 2.0, 3.0, 6.0];
        assert_eq!(mask_fill(&data, MaskValue::Mean), 3.0);
        assert_eq!(mask_fill(&data, MaskValue::Constant(-1.0)), -1.0);
    }
}
