use flnet_autodiff::{AutodiffError, TrainError};
use flnet_core::RasterError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint does not describe this model: {0}")]
    Checkpoint(String),
    #[error("shape: {0}")]
    Shape(String),
    #[error("grid misalignment: {0}")]
    Misaligned(String),
    #[error(transparent)]
    Engine(#[from] AutodiffError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;
