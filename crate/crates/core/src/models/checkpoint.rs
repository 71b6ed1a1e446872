//! Checkpoint file, all integers and floats little-endian:
//!
//! ```text
//! "DDCN"  u32 version  str model_name  u32 layer_count  layer_record*
//! u64 step  u64 seed  tensor_record* (until end of file)
//!
//! str            = u32 byte_len, UTF-8 bytes
//! layer_record   = u8 kind, str label, kind-specific fields
//! tensor_record  = str name, u8 dtype (0 = f32, 1 = f64), u32 rank, u64 extent*, payload
//! ```
//!
//! Parameters come first in forward order, then each batchnorm's running mean and variance.

use std::fs;
use std::path::Path;

use super::{Layer, LayerSpec, Model, ModelError, ModelSpec, Param};
use crate::nn::{BatchNorm2dSpec, Conv2dSpec, DisoutSpec, LinearSpec, Pool2dSpec, PoolKind, RunningStats};
use crate::tensor::{DType, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DDCN";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    /// Optimizer steps taken when the checkpoint was written.
    pub step: u64,
    /// Run seed the remaining random streams derive from.
    pub seed: u64,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn pair(&mut self, p: (usize, usize)) {
        self.u32(p.0);
        self.u32(p.1);
    }

    fn layer(&mut self, layer: &Layer) {
        let kind = match layer.spec {
            LayerSpec::Conv2d(_) => 0,
            LayerSpec::BatchNorm2d(_) => 1,
            LayerSpec::Relu => 2,
            LayerSpec::Pool2d(_) => 3,
            LayerSpec::GlobalAvgPool => 4,
            LayerSpec::Disout(_) => 5,
            LayerSpec::Linear(_) => 6,
        };
        self.u8(kind);
        self.str(&layer.label);
        match layer.spec {
            LayerSpec::Conv2d(c) => {
                self.u32(c.in_channels);
                self.u32(c.out_channels);
                self.pair(c.kernel);
                self.pair(c.stride);
                self.pair(c.padding);
                self.u32(c.groups);
                self.u8(c.bias as u8);
            }
            LayerSpec::BatchNorm2d(b) => {
                self.u32(b.channels);
                self.f64(b.eps);
                self.f64(b.momentum);
            }
            LayerSpec::Pool2d(p) => {
                self.u8(matches!(p.kind, PoolKind::Max) as u8);
                self.pair(p.window);
                self.pair(p.stride);
            }
            LayerSpec::Disout(d) => {
                self.f64(d.dist_prob_start);
                self.f64(d.dist_prob_end);
                self.pair(d.block_size);
                self.f64(d.alpha);
                self.u64(d.schedule_steps);
            }
            LayerSpec::Linear(l) => {
                self.u32(l.in_features);
                self.u32(l.out_features);
                self.u8(l.bias as u8);
            }
            LayerSpec::Relu | LayerSpec::GlobalAvgPool => {}
        }
    }

    fn tensor(&mut self, name: &str, t: &Tensor<f32>) {
        self.str(name);
        self.u8(DType::F32.tag());
        self.u32(t.shape().len());
        for &d in t.shape() {
            self.u64(d as u64);
        }
        for v in t.data() {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &Model<f32>, step: u64, seed: u64) -> Result<(), ModelError> {
    let path = path.as_ref();
    let mut w = Writer(Vec::with_capacity(64 + 4 * model.param_count()));
    w.0.extend_from_slice(CHECKPOINT_MAGIC);
    w.0.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    w.str(&model.spec.name);
    w.u32(model.spec.layers.len());
    for layer in &model.spec.layers {
        w.layer(layer);
    }
    w.u64(step);
    w.u64(seed);
    for p in &model.params {
        w.tensor(&p.name, &p.value);
    }
    for ((mean_name, var_name, _), stats) in model.spec.buffer_slots().iter().zip(&model.buffers) {
        w.tensor(mean_name, &stats.mean);
        w.tensor(var_name, &stats.var);
    }
    fs::write(path, w.0).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> Reader<'a> {
    fn corrupt(&self, msg: impl Into<String>) -> ModelError {
        ModelError::CorruptCheckpoint {
            path: self.path.to_string(),
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.bytes.len() - self.pos < n {
            return Err(self.corrupt(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, ModelError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String, ModelError> {
        let n = self.u32()?;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.corrupt("label is not UTF-8"))
    }
    fn pair(&mut self) -> Result<(usize, usize), ModelError> {
        Ok((self.u32()?, self.u32()?))
    }
    fn flag(&mut self) -> Result<bool, ModelError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(self.corrupt(format!("bad flag byte {v}"))),
        }
    }

    fn layer(&mut self) -> Result<Layer, ModelError> {
        let kind = self.u8()?;
        let label = self.str()?;
        let spec = match kind {
            0 => LayerSpec::Conv2d(Conv2dSpec {
                in_channels: self.u32()?,
                out_channels: self.u32()?,
                kernel: self.pair()?,
                stride: self.pair()?,
                padding: self.pair()?,
                groups: self.u32()?,
                bias: self.flag()?,
            }),
            1 => LayerSpec::BatchNorm2d(BatchNorm2dSpec {
                channels: self.u32()?,
                eps: self.f64()?,
                momentum: self.f64()?,
            }),
            2 => LayerSpec::Relu,
            3 => LayerSpec::Pool2d(Pool2dSpec {
                kind: if self.flag()? { PoolKind::Max } else { PoolKind::Avg },
                window: self.pair()?,
                stride: self.pair()?,
            }),
            4 => LayerSpec::GlobalAvgPool,
            5 => LayerSpec::Disout(DisoutSpec {
                dist_prob_start: self.f64()?,
                dist_prob_end: self.f64()?,
                block_size: self.pair()?,
                alpha: self.f64()?,
                schedule_steps: self.u64()?,
            }),
            6 => LayerSpec::Linear(LinearSpec {
                in_features: self.u32()?,
                out_features: self.u32()?,
                bias: self.flag()?,
            }),
            k => return Err(self.corrupt(format!("unknown layer kind {k}"))),
        };
        Ok(Layer { label, spec })
    }

    fn tensor(&mut self) -> Result<(String, Tensor<f32>), ModelError> {
        let name = self.str()?;
        let dtype = self.u8()?;
        if DType::from_tag(dtype) != Some(DType::F32) {
            return Err(self.corrupt(format!("{name}: unsupported dtype tag {dtype}")));
        }
        let rank = self.u32()?;
        if rank > 8 {
            return Err(self.corrupt(format!("{name}: implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u64()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n.checked_mul(4).is_some_and(|b| b <= self.bytes.len()))
            .ok_or_else(|| self.corrupt(format!("{name}: extents {shape:?} exceed the file")))?;
        let data = self
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::from_vec(shape, data).map_err(|e| self.corrupt(format!("{name}: {e}")))?;
        Ok((name, t))
    }
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, ModelError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let bytes = fs::read(path).map_err(|source| ModelError::Io {
        path: shown.clone(),
        source,
    })?;
    let mut r = Reader { bytes: &bytes, pos: 0, path: &shown };
    if r.take(4).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(r.corrupt("missing DDCN magic"));
    }
    let version = r.u32()? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Version {
            path: shown,
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let name = r.str()?;
    let n_layers = r.u32()?;
    if n_layers > 1024 {
        return Err(r.corrupt(format!("implausible layer count {n_layers}")));
    }
    let layers = (0..n_layers).map(|_| r.layer()).collect::<Result<Vec<_>, _>>()?;
    let spec = ModelSpec { name, layers, num_classes: super::NUM_CLASSES };
    spec.trace(&[1, 1, super::INPUT_HW.0, super::INPUT_HW.1])
        .map_err(|e| r.corrupt(format!("layer records do not compose: {e}")))?;
    let step = r.u64()?;
    let seed = r.u64()?;
    let mut records = Vec::new();
    while r.pos < bytes.len() {
        records.push(r.tensor()?);
    }

    let slots = spec.param_slots();
    let buffer_slots = spec.buffer_slots();
    let expected = slots.len() + 2 * buffer_slots.len();
    if records.len() != expected {
        return Err(ModelError::CountMismatch {
            path: shown,
            what: "tensors",
            found: records.len(),
            expected,
        });
    }
    let mut records = records.into_iter();
    let mut params = Vec::with_capacity(slots.len());
    for slot in slots {
        let (name, value) = records.next().expect("counted");
        if name != slot.name || value.shape() != slot.shape.as_slice() {
            return Err(r.corrupt(format!(
                "expected {} {:?}, found {name} {:?}",
                slot.name,
                slot.shape,
                value.shape()
            )));
        }
        params.push(Param { name, value, decay: slot.decay });
    }
    let mut buffers = Vec::with_capacity(buffer_slots.len());
    for (mean_name, var_name, channels) in buffer_slots {
        let (a, mean) = records.next().expect("counted");
        let (b, var) = records.next().expect("counted");
        if a != mean_name || b != var_name || mean.shape() != [channels] || var.shape() != [channels] {
            return Err(r.corrupt(format!("expected buffers {mean_name}, {var_name}, found {a}, {b}")));
        }
        buffers.push(RunningStats { mean, var });
    }
    let model = Model { spec, params, buffers };
    let count = model.param_count();
    if count != model.spec.count_params() {
        return Err(ModelError::CountMismatch {
            path: shown,
            what: "parameters",
            found: count,
            expected: model.spec.count_params(),
        });
    }
    Ok(Checkpoint { model, step, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_cnn3, build_ddcnn};

    #[test]
    fn round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let mut m = Model::<f32>::init(build_ddcnn(DisoutSpec::default()), 3).unwrap();
        m.buffers[0].mean.data_mut()[0] = 0.25;
        save_checkpoint(&p, &m, 17, 99).unwrap();
        let c = load_checkpoint(&p).unwrap();
        assert_eq!(c.model, m);
        assert_eq!((c.step, c.seed), (17, 99));
    }

    #[test]
    fn damaged_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let m = Model::<f32>::init(build_cnn3(), 3).unwrap();
        save_checkpoint(&p, &m, 0, 0).unwrap();
        let raw = fs::read(&p).unwrap();

        fs::write(&p, &raw[..raw.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(ModelError::CorruptCheckpoint { .. })));

        let mut bad = raw.clone();
        bad[0] = b'X';
        fs::write(&p, &bad).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(ModelError::CorruptCheckpoint { .. })));

        let mut bad = raw.clone();
        bad[4] = 9;
        fs::write(&p, &bad).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(ModelError::Version { found: 9, .. })));

        // Drop the last tensor record (Conv2d-3's batchnorm running var, 128 floats).
        let cut = raw.len() - (4 + "BatchNorm2d-4.running_var".len() + 1 + 4 + 8 + 128 * 4);
        fs::write(&p, &raw[..cut]).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(ModelError::CountMismatch { .. })));
    }
}
