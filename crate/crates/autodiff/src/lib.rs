//! Reverse-mode automatic differentiation over dense image tensors.
//!
//! Provides exactly the operations the super-resolution and segmentation
//! networks need: 2-D convolution, ReLU, addition, pixel shuffle, max
//! pooling, nearest upsampling, channel concatenation, masked L1 and
//! weighted/focal cross-entropy losses, plus Adam and a training loop.

pub mod adam;
pub mod checkpoint;
pub mod error;
pub mod float;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod params;
pub mod tensor;
pub mod train;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use error::{AutodiffError, Result};
pub use float::Float;
pub use graph::{Gradients, Graph, Var};
pub use kernels::CrossEntropyOptions;
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
pub use train::{run_training, EpochRecord, Objective, StopReason, TrainError, TrainOutcome, TrainSchedule};
