//! Optimization, the training loop, and evaluation.

mod config;
mod eval;
mod optim;

pub use config::{LrSchedule, TrainConfig};
pub use eval::{argmax, evaluate, EvalReport};
pub use optim::{AdamW, AdamWConfig};

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand::seq::SliceRandom;
use thiserror::Error;

use crate::augment::{augment_slice, AugmentError};
use crate::datasets::{Dataset, Sample};
use crate::features::{FRAMES, MEL_BINS};
use crate::models::{Checkpoint, Mode, Model, ModelError};
use crate::rng::{stream, Stream};
use crate::tensor::{Tape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("numerical failure: {0}")]
    NonFinite(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(ModelError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::NonFinite { .. } => TrainError::NonFinite(e.to_string()),
            other => TrainError::Model(ModelError::Tensor(other)),
        }
    }
}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Tensor(t) => t.into(),
            other => TrainError::Model(other),
        }
    }
}

/// Where a crop window starts inside a full map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Crop {
    Centre,
    At(usize),
}

/// Stacks `FRAMES × MEL_BINS` maps into `[n, 1, crop, MEL_BINS]` (`crop_frames == 0` keeps all).
pub(crate) fn batch_tensor(maps: &[&[f32]], crop_frames: usize, crops: &[Crop]) -> Result<Tensor<f32>, TrainError> {
    let frames = if crop_frames == 0 { FRAMES } else { crop_frames };
    let mut data = Vec::with_capacity(maps.len() * frames * MEL_BINS);
    for (map, crop) in maps.iter().zip(crops) {
        if map.len() != FRAMES * MEL_BINS {
            return Err(ModelError::Geometry {
                got: vec![map.len() / MEL_BINS, MEL_BINS],
                msg: "feature maps must be 640×64".into(),
            }
            .into());
        }
        let start = match *crop {
            Crop::Centre => (FRAMES - frames) / 2,
            Crop::At(s) => s,
        };
        data.extend_from_slice(&map[start * MEL_BINS..(start + frames) * MEL_BINS]);
    }
    Ok(Tensor::from_vec([maps.len(), 1, frames, MEL_BINS], data)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

pub fn metrics_csv(log: &[EpochMetrics]) -> String {
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    let mut s = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
    for m in log {
        writeln!(s, "{},{},{},{},{}", m.epoch, m.train_loss, m.train_acc, opt(m.val_loss), opt(m.val_acc)).unwrap();
    }
    s
}

pub fn write_metrics_csv(path: impl AsRef<Path>, log: &[EpochMetrics]) -> Result<(), TrainError> {
    let path = path.as_ref();
    std::fs::write(path, metrics_csv(log)).map_err(|source| TrainError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub struct TrainOutcome {
    /// Best-by-validation model (the final one when there is no validation split).
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub last: Model<f32>,
    pub log: Vec<EpochMetrics>,
    pub steps: u64,
}

pub fn steps_per_epoch(n: usize, batch_size: usize) -> usize {
    n.div_ceil(batch_size)
}

fn lr_at(cfg: &TrainConfig, step: u64, total: u64) -> f64 {
    match cfg.lr_schedule {
        LrSchedule::Constant => cfg.lr,
        LrSchedule::Cosine => 0.5 * cfg.lr * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos()),
    }
}

/// Trains `cfg.model` on `data.train`, evaluating on `data.val` after every epoch.
/// `on_epoch` sees each epoch's metrics as they are produced.
pub fn train(data: &Dataset, cfg: &TrainConfig, mut on_epoch: impl FnMut(&EpochMetrics)) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let per_epoch = steps_per_epoch(data.train.len(), cfg.batch_size);
    let total = (per_epoch * cfg.epochs) as u64;
    let mut disout = cfg.disout;
    if disout.schedule_steps == 0 {
        disout.schedule_steps = total;
    }
    let mut model = Model::<f32>::init(cfg.model.build(disout), cfg.seed)?;
    let mut opt = AdamW::new(
        AdamWConfig {
            lr: cfg.lr,
            beta1: cfg.betas.0,
            beta2: cfg.betas.1,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
        },
        &model.params,
    );

    let mut shuffle_rng = stream(cfg.seed, Stream::Shuffle);
    let mut augment_rng = stream(cfg.seed, Stream::Augment);
    let mut crop_rng = stream(cfg.seed, Stream::Crop);
    let mut disout_rng = stream(cfg.seed, Stream::Disout);
    let frames = if cfg.crop_frames == 0 { FRAMES } else { cfg.crop_frames };

    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, f64, usize, Model<f32>)> = None;
    let mut step = 0u64;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let samples: Vec<&Sample> = batch.iter().map(|&i| &data.train[i]).collect();
            let mut maps: Vec<Vec<f32>> = samples.iter().map(|s| s.features.values.data().to_vec()).collect();
            for m in &mut maps {
                augment_slice(m, FRAMES, MEL_BINS, &cfg.augment, &mut augment_rng)?;
            }
            let crops: Vec<Crop> = maps
                .iter()
                .map(|_| Crop::At(crop_rng.random_range(0..=FRAMES - frames)))
                .collect();
            let refs: Vec<&[f32]> = maps.iter().map(Vec::as_slice).collect();
            let x = batch_tensor(&refs, cfg.crop_frames, &crops)?;
            let targets: Vec<usize> = samples.iter().map(|s| s.label.index()).collect();

            let mut tape = Tape::new();
            let xv = tape.constant(x);
            let fwd = model.forward(&mut tape, xv, Mode::Train, step.min(disout.schedule_steps), &mut disout_rng)?;
            let loss = tape.cross_entropy(fwd.logits, &targets)?;
            let loss_value = tape.value(loss)?.item().expect("scalar loss") as f64;
            if !loss_value.is_finite() {
                return Err(TrainError::NonFinite(format!("loss is {loss_value} at step {step}")));
            }
            let logits = tape.value(fwd.logits)?.data().to_vec();
            let mut grads = tape.backward(loss)?;
            let grads: Vec<Vec<f32>> = fwd
                .params
                .iter()
                .zip(&model.params)
                .map(|(&v, p)| grads.take(v).unwrap_or_else(|| vec![0.0; p.value.numel()]))
                .collect();
            opt.step(&mut model.params, &grads, lr_at(cfg, step, total))?;

            loss_sum += loss_value * batch.len() as f64;
            correct += logits
                .chunks(3)
                .zip(&targets)
                .filter(|(row, &t)| argmax(row) == t)
                .count();
            step += 1;
        }
        let n = data.train.len() as f64;
        let mut metrics = EpochMetrics {
            epoch,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            val_loss: None,
            val_acc: None,
        };
        if !data.val.is_empty() {
            let r = evaluate(&model, &data.val, cfg.crop_frames)?;
            metrics.val_loss = Some(r.loss);
            metrics.val_acc = Some(r.accuracy);
            let better = match &best {
                None => true,
                Some((acc, loss, _, _)) => r.accuracy > *acc || (r.accuracy == *acc && r.loss < *loss),
            };
            if better {
                best = Some((r.accuracy, r.loss, epoch, model.clone()));
            }
        }
        on_epoch(&metrics);
        log.push(metrics);
    }
    let (best_epoch, best_model) = match best {
        Some((_, _, e, m)) => (e, m),
        None => (cfg.epochs, model.clone()),
    };
    Ok(TrainOutcome {
        best: Checkpoint {
            model: best_model,
            step: (best_epoch * per_epoch) as u64,
            seed: cfg.seed,
        },
        best_epoch,
        last: model,
        log,
        steps: step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centre_and_offset_crops() {
        let map: Vec<f32> = (0..FRAMES * MEL_BINS).map(|i| (i / MEL_BINS) as f32).collect();
        let x = batch_tensor(&[&map, &map], 160, &[Crop::Centre, Crop::At(3)]).unwrap();
        assert_eq!(x.shape(), &[2, 1, 160, 64]);
        assert_eq!(x.data()[0], 240.0);
        assert_eq!(x.data()[160 * 64], 3.0);
        let full = batch_tensor(&[&map], 0, &[Crop::Centre]).unwrap();
        assert_eq!(full.data(), map.as_slice());
    }

    #[test]
    fn step_arithmetic() {
        assert_eq!(steps_per_epoch(32, 16), 2);
        assert_eq!(steps_per_epoch(33, 16), 3);
    }
}
