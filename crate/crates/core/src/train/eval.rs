use std::fmt::Write as _;

use super::{batch_tensor, Crop, TrainError};
use crate::datasets::{Sample, SceneClass};
use crate::models::Model;
use crate::nn::cross_entropy_per_sample;

const EVAL_CHUNK: usize = 16;

/// Per-scene and overall accuracy and loss, plus the confusion matrix
/// (rows: true class, columns: predicted class).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub class_count: [usize; 3],
    /// `None` for classes with no samples.
    pub class_accuracy: [Option<f64>; 3],
    pub class_loss: [Option<f64>; 3],
    pub accuracy: f64,
    pub loss: f64,
    pub confusion: [[usize; 3]; 3],
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl EvalReport {
    /// Builds the report from `(true class, predicted class, loss)` triples.
    pub fn from_predictions(items: &[(usize, usize, f64)]) -> Result<Self, TrainError> {
        if items.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let mut confusion = [[0usize; 3]; 3];
        let mut loss_sum = [0.0f64; 3];
        for &(t, p, l) in items {
            confusion[t][p] += 1;
            loss_sum[t] += l;
        }
        let class_count = confusion.map(|row| row.iter().sum::<usize>());
        let mut class_accuracy = [None; 3];
        let mut class_loss = [None; 3];
        for c in 0..3 {
            if class_count[c] > 0 {
                class_accuracy[c] = Some(confusion[c][c] as f64 / class_count[c] as f64);
                class_loss[c] = Some(loss_sum[c] / class_count[c] as f64);
            }
        }
        let total = items.len() as f64;
        let trace: usize = (0..3).map(|c| confusion[c][c]).sum();
        Ok(Self {
            class_count,
            class_accuracy,
            class_loss,
            accuracy: trace as f64 / total,
            loss: loss_sum.iter().sum::<f64>() / total,
            confusion,
        })
    }

    pub fn total(&self) -> usize {
        self.class_count.iter().sum()
    }

    /// Per-scene table with an `Average` row and the confusion matrix.
    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        let mut s = String::new();
        writeln!(s, "{:<16}{:>10}{:>10}{:>8}", "Scene", "Accuracy", "Loss", "N").unwrap();
        for c in SceneClass::ALL {
            let i = c.index();
            writeln!(
                s,
                "{:<16}{:>10}{:>10}{:>8}",
                c.title(),
                fmt(self.class_accuracy[i]),
                fmt(self.class_loss[i]),
                self.class_count[i]
            )
            .unwrap();
        }
        writeln!(s, "{:<16}{:>10.4}{:>10.4}{:>8}", "Average", self.accuracy, self.loss, self.total()).unwrap();
        writeln!(s).unwrap();
        writeln!(s, "Confusion matrix (rows: true, columns: predicted)").unwrap();
        writeln!(s, "{:<16}{:>8}{:>8}{:>16}", "", "indoor", "outdoor", "transportation").unwrap();
        for c in SceneClass::ALL {
            let r = self.confusion[c.index()];
            writeln!(s, "{:<16}{:>8}{:>8}{:>16}", c.name(), r[0], r[1], r[2]).unwrap();
        }
        s
    }

    /// `key=value` lines for machines.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        writeln!(s, "accuracy={}", self.accuracy).unwrap();
        writeln!(s, "loss={}", self.loss).unwrap();
        writeln!(s, "samples={}", self.total()).unwrap();
        for c in SceneClass::ALL {
            let i = c.index();
            writeln!(s, "{c}.count={}", self.class_count[i]).unwrap();
            if let (Some(a), Some(l)) = (self.class_accuracy[i], self.class_loss[i]) {
                writeln!(s, "{c}.accuracy={a}").unwrap();
                writeln!(s, "{c}.loss={l}").unwrap();
            }
        }
        for t in 0..3 {
            for p in 0..3 {
                writeln!(s, "confusion.{t}.{p}={}", self.confusion[t][p]).unwrap();
            }
        }
        s
    }
}

/// Eval-mode pass over `samples`: no augmentation, no Disout, centre crops when cropping.
pub fn evaluate(model: &Model<f32>, samples: &[Sample], crop_frames: usize) -> Result<EvalReport, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut items = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_CHUNK) {
        let maps: Vec<&[f32]> = chunk.iter().map(|s| s.features.values.data()).collect();
        let crops = vec![Crop::Centre; chunk.len()];
        let x = batch_tensor(&maps, crop_frames, &crops)?;
        let logits = model.predict(&x)?;
        let targets: Vec<usize> = chunk.iter().map(|s| s.label.index()).collect();
        let losses = cross_entropy_per_sample(logits.data(), 3, &targets)?;
        for ((row, &t), l) in logits.data().chunks(3).zip(&targets).zip(losses) {
            items.push((t, argmax(row), l as f64));
        }
    }
    EvalReport::from_predictions(&items)
}
