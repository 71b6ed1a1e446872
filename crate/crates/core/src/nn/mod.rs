//! Layers used by the scene classifiers. Every layer records an explicit backward rule on
//! the [`Tape`](crate::tensor::Tape).

mod batchnorm;
mod conv;
mod disout;
mod linear;
mod loss;
mod pool;

pub use batchnorm::{BatchNorm2dSpec, RunningStats};
pub use conv::{Conv2dSpec, DepthwiseSeparableSpec, SeparableParams};
pub use disout::{sample_perturbation, seed_rate, DisoutSpec};
pub use linear::LinearSpec;
pub use loss::{cross_entropy_per_sample, softmax_rows};
pub use pool::{Pool2dSpec, PoolKind};
