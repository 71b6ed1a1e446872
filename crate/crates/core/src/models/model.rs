use rand::Rng;

use super::{LayerSpec, ModelError, ModelSpec, INPUT_HW};
use crate::nn::RunningStats;
use crate::rng::{stream, Stream};
use crate::tensor::{Float, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<F: Float> {
    pub name: String,
    pub value: Tensor<F>,
    /// Whether the optimizer applies weight decay (conv/linear weights only).
    pub decay: bool,
}

/// Name, shape and decay flag of every learnable tensor, in forward order.
pub(crate) struct Slot {
    pub name: String,
    pub shape: Vec<usize>,
    pub decay: bool,
    pub fan_in: usize,
}

impl ModelSpec {
    pub(crate) fn param_slots(&self) -> Vec<Slot> {
        let mut out = Vec::new();
        for layer in &self.layers {
            let l = &layer.label;
            match layer.spec {
                LayerSpec::Conv2d(c) => {
                    let fan_in = c.in_per_group() * c.kernel.0 * c.kernel.1;
                    out.push(Slot { name: format!("{l}.weight"), shape: c.weight_shape().to_vec(), decay: true, fan_in });
                    if c.bias {
                        out.push(Slot { name: format!("{l}.bias"), shape: vec![c.out_channels], decay: false, fan_in });
                    }
                }
                LayerSpec::BatchNorm2d(b) => {
                    out.push(Slot { name: format!("{l}.gamma"), shape: vec![b.channels], decay: false, fan_in: 0 });
                    out.push(Slot { name: format!("{l}.beta"), shape: vec![b.channels], decay: false, fan_in: 0 });
                }
                LayerSpec::Linear(s) => {
                    let fan_in = s.in_features;
                    out.push(Slot { name: format!("{l}.weight"), shape: s.weight_shape().to_vec(), decay: true, fan_in });
                    if s.bias {
                        out.push(Slot { name: format!("{l}.bias"), shape: vec![s.out_features], decay: false, fan_in });
                    }
                }
                _ => {}
            }
        }
        out
    }

    /// `(running_mean name, running_var name, channels)` per batchnorm layer.
    pub(crate) fn buffer_slots(&self) -> Vec<(String, String, usize)> {
        self.layers
            .iter()
            .filter_map(|layer| match layer.spec {
                LayerSpec::BatchNorm2d(b) => Some((
                    format!("{}.running_mean", layer.label),
                    format!("{}.running_var", layer.label),
                    b.channels,
                )),
                _ => None,
            })
            .collect()
    }
}

/// A network with its parameters and batchnorm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<F: Float = f32> {
    pub spec: ModelSpec,
    pub params: Vec<Param<F>>,
    pub buffers: Vec<RunningStats<F>>,
}

/// Logits plus the tape variables holding each parameter (in `Model::params` order)
/// and each layer's output.
pub struct Forward {
    pub logits: Var,
    pub params: Vec<Var>,
    pub activations: Vec<Var>,
}

impl<F: Float> Model<F> {
    /// Kaiming-uniform weights (`±sqrt(6 / fan_in)`), biases `U(±1/sqrt(fan_in))`,
    /// batchnorm `γ = 1`, `β = 0`. Draws are made in f64 and rounded, so f32 and f64
    /// models built from one seed agree to f32 precision.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self, ModelError> {
        spec.trace(&[1, 1, INPUT_HW.0, INPUT_HW.1])?;
        let mut rng = stream(seed, Stream::Init);
        let params = spec
            .param_slots()
            .into_iter()
            .map(|slot| {
                let n: usize = slot.shape.iter().product();
                let data: Vec<F> = if slot.name.ends_with(".gamma") {
                    vec![F::one(); n]
                } else if slot.name.ends_with(".beta") {
                    vec![F::zero(); n]
                } else {
                    let bound = if slot.decay {
                        (6.0 / slot.fan_in as f64).sqrt()
                    } else {
                        1.0 / (slot.fan_in as f64).sqrt()
                    };
                    (0..n)
                        .map(|_| F::from_f64_lossy(rng.random_range(-bound..bound)))
                        .collect()
                };
                Param {
                    name: slot.name,
                    value: Tensor::from_vec(slot.shape, data).expect("slot shapes are non-empty"),
                    decay: slot.decay,
                }
            })
            .collect();
        let buffers = spec.buffer_slots().iter().map(|b| RunningStats::new(b.2)).collect();
        Ok(Self { spec, params, buffers })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn cast<G: Float>(&self) -> Model<G> {
        Model {
            spec: self.spec.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param { name: p.name.clone(), value: p.value.cast(), decay: p.decay })
                .collect(),
            buffers: self
                .buffers
                .iter()
                .map(|b| RunningStats { mean: b.mean.cast(), var: b.var.cast() })
                .collect(),
        }
    }

    fn check_input(&self, shape: &[usize]) -> Result<(), ModelError> {
        let geometry = |msg: String| ModelError::Geometry { got: shape.to_vec(), msg };
        if shape.len() != 4 || shape[1] != 1 {
            return Err(geometry("expected [N, 1, frames, mel_bins]".into()));
        }
        self.spec.trace(shape).map_err(|e| geometry(e.to_string()))?;
        Ok(())
    }

    /// Records the forward pass on `tape`. Train mode uses batch statistics (and folds them
    /// into the running buffers) and applies Disout at the probability scheduled for `step`.
    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        tape: &mut Tape<F>,
        x: Var,
        mode: Mode,
        step: u64,
        rng: &mut R,
    ) -> Result<Forward, ModelError> {
        let mut buffers = std::mem::take(&mut self.buffers);
        let out = self.run(tape, x, mode, step, rng, &mut buffers, true);
        self.buffers = buffers;
        out
    }

    /// Eval-mode logits for a batch. Shares nothing mutable, so concurrent callers are fine.
    pub fn predict(&self, x: &Tensor<F>) -> Result<Tensor<F>, ModelError> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let mut buffers = self.buffers.clone();
        // Eval mode never draws from it.
        let mut no_rng = stream(0, Stream::Disout);
        let out = self.run(&mut tape, xv, Mode::Eval, 0, &mut no_rng, &mut buffers, false)?;
        Ok(tape.value(out.logits)?.clone())
    }

    /// Concrete output shape of every layer for an eval-mode pass over `x`.
    pub fn activation_shapes(&self, x: &Tensor<F>) -> Result<Vec<Vec<usize>>, ModelError> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let mut buffers = self.buffers.clone();
        let mut no_rng = stream(0, Stream::Disout);
        let out = self.run(&mut tape, xv, Mode::Eval, 0, &mut no_rng, &mut buffers, false)?;
        out.activations
            .iter()
            .map(|&v| Ok(tape.shape(v)?.to_vec()))
            .collect()
    }

    #[allow(clippy::too_many_arguments)]
    fn run<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<F>,
        x: Var,
        mode: Mode,
        step: u64,
        rng: &mut R,
        buffers: &mut [RunningStats<F>],
        trainable: bool,
    ) -> Result<Forward, ModelError> {
        self.check_input(tape.shape(x)?)?;
        let train = mode == Mode::Train;
        let vars: Vec<Var> = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    tape.param(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect();
        let mut next = vars.iter().copied();
        let mut bn = buffers.iter_mut();
        let mut h = x;
        let mut activations = Vec::with_capacity(self.spec.layers.len());
        for layer in &self.spec.layers {
            h = match &layer.spec {
                LayerSpec::Conv2d(c) => {
                    let w = next.next().expect("slot");
                    let b = if c.bias { next.next() } else { None };
                    tape.conv2d(c, h, w, b)?
                }
                LayerSpec::BatchNorm2d(b) => {
                    let gamma = next.next().expect("slot");
                    let beta = next.next().expect("slot");
                    tape.batch_norm2d(b, h, gamma, beta, bn.next().expect("buffer"), train)?
                }
                LayerSpec::Relu => tape.relu(h)?,
                LayerSpec::Pool2d(p) => tape.pool2d(p, h)?,
                LayerSpec::GlobalAvgPool => tape.global_avg_pool(h)?,
                LayerSpec::Disout(d) => tape.disout(d, h, train, step, rng)?,
                LayerSpec::Linear(l) => {
                    let w = next.next().expect("slot");
                    let b = if l.bias { next.next() } else { None };
                    tape.linear(l, h, w, b)?
                }
            };
            activations.push(h);
        }
        Ok(Forward { logits: h, params: vars, activations })
    }
}
