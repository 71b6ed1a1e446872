//! Flat `key = value` training configuration with `#` comments.

use std::fmt::Write as _;
use std::str::FromStr;

use super::TrainError;
use crate::augment::{MaskValue, SpecAugmentConfig};
use crate::models::ModelKind;
use crate::nn::DisoutSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    Cosine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
    pub lr_schedule: LrSchedule,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub augment: SpecAugmentConfig,
    /// `schedule_steps == 0` means "ramp over the whole run".
    pub disout: DisoutSpec,
    /// Train on random crops of this many frames (centre crops at evaluation); 0 = full maps.
    pub crop_frames: usize,
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::DdCnn,
            lr: 0.001,
            betas: (0.9, 0.999),
            eps: 1e-8,
            weight_decay: 0.01,
            lr_schedule: LrSchedule::Constant,
            batch_size: 16,
            epochs: 200,
            seed: 42,
            augment: SpecAugmentConfig::default(),
            disout: DisoutSpec { schedule_steps: 0, ..DisoutSpec::default() },
            crop_frames: 0,
            val_fraction: 0.2,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("{key}: cannot parse {v:?}"))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: String| Err(TrainError::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return fail(format!("betas must lie in [0, 1), got ({b1}, {b2})"));
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return fail("eps must be positive and weight_decay non-negative".into());
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return fail(format!("val_fraction must lie in [0, 1), got {}", self.val_fraction));
        }
        let probe = DisoutSpec { schedule_steps: 1, ..self.disout };
        probe.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        self.augment
            .validate(crate::features::FRAMES, crate::features::MEL_BINS)
            .map_err(|e| TrainError::Config(e.to_string()))?;
        if self.crop_frames > crate::features::FRAMES || (self.crop_frames > 0 && !self.crop_frames.is_multiple_of(16)) {
            return fail(format!("crop_frames must be 0 or a multiple of 16 up to 640, got {}", self.crop_frames));
        }
        Ok(())
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        match key.trim() {
            "model" => self.model = ModelKind::from_name(v).map_err(|e| e.to_string())?,
            "lr" => self.lr = parse(key, v)?,
            "beta1" => self.betas.0 = parse(key, v)?,
            "beta2" => self.betas.1 = parse(key, v)?,
            "eps" => self.eps = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "lr_schedule" => {
                self.lr_schedule = match v {
                    "constant" => LrSchedule::Constant,
                    "cosine" => LrSchedule::Cosine,
                    _ => return Err(format!("lr_schedule: expected constant or cosine, got {v:?}")),
                }
            }
            "batch_size" => self.batch_size = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "freq_mask_param" => self.augment.freq_mask_param = parse(key, v)?,
            "num_freq_masks" => self.augment.num_freq_masks = parse(key, v)?,
            "time_mask_param" => self.augment.time_mask_param = parse(key, v)?,
            "num_time_masks" => self.augment.num_time_masks = parse(key, v)?,
            "mask_value" => {
                self.augment.mask_value = match v {
                    "mean" => MaskValue::Mean,
                    _ => MaskValue::Constant(parse(key, v)?),
                }
            }
            "disout_start" => self.disout.dist_prob_start = parse(key, v)?,
            "disout_end" => self.disout.dist_prob_end = parse(key, v)?,
            "disout_block" => {
                let b = parse(key, v)?;
                self.disout.block_size = (b, b);
            }
            "disout_alpha" => self.disout.alpha = parse(key, v)?,
            "disout_schedule_steps" => self.disout.schedule_steps = parse(key, v)?,
            "crop_frames" => self.crop_frames = parse(key, v)?,
            "val_fraction" => self.val_fraction = parse(key, v)?,
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    /// Parses config text on top of the defaults. Unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self, TrainError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| TrainError::Config(format!("line {}: expected key = value", i + 1)))?;
            cfg.set(k, v)
                .map_err(|m| TrainError::Config(format!("line {}: {m}", i + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let a = &self.augment;
        let d = &self.disout;
        let mask = match a.mask_value {
            MaskValue::Mean => "mean".to_string(),
            MaskValue::Constant(v) => format!("{v:?}"),
        };
        let schedule = match self.lr_schedule {
            LrSchedule::Constant => "constant",
            LrSchedule::Cosine => "cosine",
        };
        let lines: [(&str, String); 22] = [
            ("model", self.model.to_string()),
            ("lr", format!("{:?}", self.lr)),
            ("beta1", format!("{:?}", self.betas.0)),
            ("beta2", format!("{:?}", self.betas.1)),
            ("eps", format!("{:?}", self.eps)),
            ("weight_decay", format!("{:?}", self.weight_decay)),
            ("lr_schedule", schedule.into()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("freq_mask_param", a.freq_mask_param.to_string()),
            ("num_freq_masks", a.num_freq_masks.to_string()),
            ("time_mask_param", a.time_mask_param.to_string()),
            ("num_time_masks", a.num_time_masks.to_string()),
            ("mask_value", mask),
            ("disout_start", format!("{:?}", d.dist_prob_start)),
            ("disout_end", format!("{:?}", d.dist_prob_end)),
            ("disout_block", d.block_size.0.to_string()),
            ("disout_alpha", format!("{:?}", d.alpha)),
            ("disout_schedule_steps", d.schedule_steps.to_string()),
            ("crop_frames", self.crop_frames.to_string()),
            ("val_fraction", format!("{:?}", self.val_fraction)),
        ];
        for (k, v) in lines {
            writeln!(s, "{k} = {v}").unwrap();
        }
        s
    }
}
