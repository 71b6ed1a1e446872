//! Low-complexity acoustic scene classification: log-mel features, SpecAugment,
//! grouped and depthwise convolutional networks with Disout, and AdamW training.

pub mod augment;
pub mod datasets;
pub mod features;
pub mod models;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod train;

use thiserror::Error;

/// Any failure surfaced by the library, grouped by how a caller should react.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Feature(#[from] features::FeatureError),
    #[error(transparent)]
    Dataset(#[from] datasets::DatasetError),
    #[error(transparent)]
    Model(#[from] models::ModelError),
    #[error(transparent)]
    Train(#[from] train::TrainError),
    #[error(transparent)]
    Augment(#[from] augment::AugmentError),
    #[error(transparent)]
    Tensor(#[from] tensor::TensorError),
}

impl Error {
    /// Process exit status: 1 usage/config, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        use tensor::TensorError;
        match self {
            Error::Train(train::TrainError::Config(_)) | Error::Augment(_) => 1,
            Error::Model(models::ModelError::UnknownModel(_)) => 1,
            Error::Train(train::TrainError::NonFinite(_)) => 3,
            Error::Tensor(TensorError::NonFinite { .. })
            | Error::Model(models::ModelError::Tensor(TensorError::NonFinite { .. })) => 3,
            Error::Feature(features::FeatureError::InvalidConfig(_)) => 1,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
