//! Architecture descriptions, accounting, and the three concrete networks.

mod checkpoint;
mod model;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use model::{Mode, Model, Param};

use std::fmt;

use thiserror::Error;

use crate::nn::{BatchNorm2dSpec, Conv2dSpec, DisoutSpec, LinearSpec, Pool2dSpec};
use crate::tensor::TensorError;

pub const NUM_CLASSES: usize = 3;
/// Nominal input: one log-mel channel, 640 frames × 64 mel bins.
pub const INPUT_HW: (usize, usize) = (640, 64);

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown model {0:?} (expected cnn5, cnn3 or ddcnn)")]
    UnknownModel(String),
    #[error("input shape {got:?} does not fit the model: {msg}")]
    Geometry { got: Vec<usize>, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: corrupt checkpoint: {msg}")]
    CorruptCheckpoint { path: String, msg: String },
    #[error("{path}: checkpoint version {found} is not supported (expected {expected})")]
    Version { path: String, found: u32, expected: u32 },
    #[error("{path}: checkpoint holds {found} {what}, the architecture needs {expected}")]
    CountMismatch {
        path: String,
        what: &'static str,
        found: usize,
        expected: usize,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Cnn5,
    Cnn3,
    DdCnn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Cnn5, ModelKind::Cnn3, ModelKind::DdCnn];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Cnn5 => "cnn5",
            ModelKind::Cnn3 => "cnn3",
            ModelKind::DdCnn => "ddcnn",
        }
    }

    pub fn from_name(s: &str) -> Result<Self, ModelError> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| ModelError::UnknownModel(s.to_string()))
    }

    pub fn build(self, disout: DisoutSpec) -> ModelSpec {
        match self {
            ModelKind::Cnn5 => build_cnn5(),
            ModelKind::Cnn3 => build_cnn3(),
            ModelKind::DdCnn => build_ddcnn(disout),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Conv2d(Conv2dSpec),
    BatchNorm2d(BatchNorm2dSpec),
    Relu,
    Pool2d(Pool2dSpec),
    GlobalAvgPool,
    Disout(DisoutSpec),
    Linear(LinearSpec),
}

impl LayerSpec {
    pub fn param_count(&self) -> usize {
        match self {
            LayerSpec::Conv2d(c) => c.param_count(),
            LayerSpec::BatchNorm2d(b) => b.param_count(),
            LayerSpec::Linear(l) => l.param_count(),
            _ => 0,
        }
    }

    /// Output shape for a given input shape (batch dimension passed through).
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, TensorError> {
        let bad = |msg: String| TensorError::InvalidArgument { op: "shape_trace", msg };
        let need4 = || {
            if input.len() == 4 {
                Ok((input[0], input[1], input[2], input[3]))
            } else {
                Err(bad(format!("expected NCHW input, got {input:?}")))
            }
        };
        match self {
            LayerSpec::Conv2d(c) => {
                let (n, ch, h, w) = need4()?;
                if ch != c.in_channels {
                    return Err(bad(format!("conv expects {} channels, got {ch}", c.in_channels)));
                }
                let (ho, wo) = c.output_hw(h, w)?;
                Ok(vec![n, c.out_channels, ho, wo])
            }
            LayerSpec::BatchNorm2d(b) => {
                let (_, ch, _, _) = need4()?;
                if ch != b.channels {
                    return Err(bad(format!("batchnorm expects {} channels, got {ch}", b.channels)));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Pool2d(p) => {
                let (n, ch, h, w) = need4()?;
                let (ho, wo) = p.output_hw(h, w)?;
                Ok(vec![n, ch, ho, wo])
            }
            LayerSpec::GlobalAvgPool => {
                let (n, ch, _, _) = need4()?;
                Ok(vec![n, ch])
            }
            LayerSpec::Disout(d) => {
                let (_, _, h, w) = need4()?;
                if d.block_size.0 > h || d.block_size.1 > w {
                    return Err(bad(format!("disout block {:?} exceeds {h}×{w}", d.block_size)));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Linear(l) => {
                if input.len() != 2 || input[1] != l.in_features {
                    return Err(bad(format!("linear expects [N, {}], got {input:?}", l.in_features)));
                }
                Ok(vec![input[0], l.out_features])
            }
        }
    }

    fn macs(&self, input: &[usize]) -> Result<u64, TensorError> {
        match self {
            LayerSpec::Conv2d(c) => c.macs(input[2], input[3]),
            LayerSpec::Linear(l) => Ok(l.macs()),
            _ => Ok(0),
        }
    }

    /// Shown in the architecture tables (activations and pools are not).
    fn in_table(&self) -> bool {
        matches!(
            self,
            LayerSpec::Conv2d(_) | LayerSpec::BatchNorm2d(_) | LayerSpec::Disout(_) | LayerSpec::Linear(_)
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub label: String,
    pub spec: LayerSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub name: String,
    pub layers: Vec<Layer>,
    pub num_classes: usize,
}

/// One row of an architecture table; `shape[0] == -1` stands for the batch dimension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableRow {
    pub label: String,
    pub shape: Vec<i64>,
    pub params: usize,
}

impl ModelSpec {
    pub fn kind(&self) -> Result<ModelKind, ModelError> {
        ModelKind::from_name(&self.name)
    }

    pub fn count_params(&self) -> usize {
        self.layers.iter().map(|l| l.spec.param_count()).sum()
    }

    /// Output shape after every layer for an `[n, 1, h, w]` input.
    pub fn trace(&self, input: &[usize]) -> Result<Vec<Vec<usize>>, TensorError> {
        let mut shape = input.to_vec();
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            shape = layer.spec.output_shape(&shape)?;
            out.push(shape.clone());
        }
        if shape != [input[0], self.num_classes] {
            return Err(TensorError::InvalidArgument {
                op: "shape_trace",
                msg: format!("network ends in {shape:?}, expected [{}, {}]", input[0], self.num_classes),
            });
        }
        Ok(out)
    }

    /// Conv and linear multiply–accumulates for one `h × w` input.
    pub fn count_macs(&self, h: usize, w: usize) -> Result<u64, TensorError> {
        let mut shape = vec![1, 1, h, w];
        let mut total = 0;
        for layer in &self.layers {
            total += layer.spec.macs(&shape)?;
            shape = layer.spec.output_shape(&shape)?;
        }
        Ok(total)
    }

    /// Rows in the layout of the published architecture tables. A Disout layer is
    /// followed by its linear scheduler row.
    pub fn table_rows(&self, h: usize, w: usize) -> Result<Vec<TableRow>, TensorError> {
        let shapes = self.trace(&[1, 1, h, w])?;
        let mut rows = Vec::new();
        for (layer, shape) in self.layers.iter().zip(&shapes) {
            if !layer.spec.in_table() {
                continue;
            }
            let mut shown: Vec<i64> = shape.iter().map(|&d| d as i64).collect();
            shown[0] = -1;
            rows.push(TableRow {
                label: layer.label.clone(),
                shape: shown.clone(),
                params: layer.spec.param_count(),
            });
            if matches!(layer.spec, LayerSpec::Disout(_)) {
                rows.push(TableRow {
                    label: scheduler_label(&layer.label),
                    shape: shown,
                    params: 0,
                });
            }
        }
        Ok(rows)
    }

    pub fn disout(&self) -> Option<DisoutSpec> {
        self.layers.iter().find_map(|l| match l.spec {
            LayerSpec::Disout(d) => Some(d),
            _ => None,
        })
    }

    /// Replaces every Disout layer's spec (used to set the schedule length before training).
    pub fn set_disout(&mut self, spec: DisoutSpec) {
        for l in &mut self.layers {
            if let LayerSpec::Disout(d) = &mut l.spec {
                *d = spec;
            }
        }
    }
}

fn scheduler_label(disout_label: &str) -> String {
    let n: usize = disout_label
        .rsplit('-')
        .next()
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    format!("LinearScheduler-{}", n + 1)
}

struct Builder {
    layers: Vec<Layer>,
}

impl Builder {
    fn new() -> Self {
        Self { layers: Vec::new() }
    }

    fn push(&mut self, label: impl Into<String>, spec: LayerSpec) -> &mut Self {
        self.layers.push(Layer { label: label.into(), spec });
        self
    }

    /// Conv → BN → ReLU, with an optional 2×2 average pool.
    fn block(&mut self, n: usize, conv: Conv2dSpec, pool: bool) -> &mut Self {
        let c = conv.out_channels;
        self.push(format!("Conv2d-{n}"), LayerSpec::Conv2d(conv))
            .push(format!("BatchNorm2d-{}", n + 1), LayerSpec::BatchNorm2d(BatchNorm2dSpec::new(c)))
            .push("ReLU", LayerSpec::Relu);
        if pool {
            self.push("AvgPool2d", LayerSpec::Pool2d(Pool2dSpec::avg2()));
        }
        self
    }

    fn head(&mut self, channels: usize) -> &mut Self {
        self.push("GlobalAvgPool", LayerSpec::GlobalAvgPool).push(
            "Linear-13",
            LayerSpec::Linear(LinearSpec::new(channels, NUM_CLASSES)),
        )
    }

    fn finish(&mut self, name: &str) -> ModelSpec {
        ModelSpec {
            name: name.to_string(),
            layers: std::mem::take(&mut self.layers),
            num_classes: NUM_CLASSES,
        }
    }
}

fn plain_conv(cin: usize, cout: usize) -> Conv2dSpec {
    Conv2dSpec::new(cin, cout, 5).with_bias(false)
}

/// Four bias-free 5×5 conv blocks (64, 128, 256, 512 channels), each pooled, then a
/// linear classifier. The published table lists its first conv row twice; it is one layer.
pub fn build_cnn5() -> ModelSpec {
    Builder::new()
        .block(1, plain_conv(1, 64), true)
        .block(3, plain_conv(64, 128), true)
        .block(5, plain_conv(128, 256), true)
        .block(7, plain_conv(256, 512), true)
        .head(512)
        .finish("cnn5")
}

/// CNN-5 without its 256- and 512-channel blocks.
pub fn build_cnn3() -> ModelSpec {
    Builder::new()
        .block(1, plain_conv(1, 64), true)
        .block(3, plain_conv(64, 128), true)
        .head(128)
        .finish("cnn3")
}

/// Standard conv, depthwise conv, then three grouped convs, four 2×2 pools in all
/// (640×64 down to 40×4), Disout, global pooling and the classifier.
pub fn build_ddcnn(disout: DisoutSpec) -> ModelSpec {
    Builder::new()
        .block(1, Conv2dSpec::new(1, 64, 5), false)
        .block(3, Conv2dSpec::new(64, 64, 5).with_groups(64), true)
        .block(5, Conv2dSpec::new(64, 128, 5).with_groups(32), true)
        .block(7, Conv2dSpec::new(128, 128, 5).with_groups(32), true)
        .block(9, Conv2dSpec::new(128, 256, 5).with_groups(8), true)
        .push("Disout-11", LayerSpec::Disout(disout))
        .head(256)
        .finish("ddcnn")
}
