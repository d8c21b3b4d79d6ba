//! The fixed 3D CNN: three 5x5x5 convolutions with 50 kernels each (batch
//! norm and ReLU after every one, 2x2x2 max pooling after the first), two
//! fully-connected layers (1350 and 160 units) and an L2-normalization layer.
//!
//! ```text
//! 1x27^3 -> 50x23^3 -> pool 50x11^3 -> 50x7^3 -> 50x3^3 -> 1350 -> 1350 -> 160 -> unit sphere
//! ```

pub mod head;
pub mod layers;
mod model;
mod params;
mod simd;
pub mod tensor;

pub use head::SoftmaxHead;
pub use model::{forward_features, sgd_step, shape_chain, train_epochs, NetGrads, TrainConfig, Trainer};
pub use params::{init_params, ConvBlock, Dense, NetParams, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use tensor::{Matrix, Real, Tensor5};

use thiserror::Error;

pub const PATCH: usize = 27;
pub const KERNEL: usize = 5;
pub const CHANNELS: usize = 50;
/// 50 channels of 3^3 after the last convolution.
pub const FLAT_WIDTH: usize = CHANNELS * 27;
pub const HIDDEN_WIDTH: usize = 1350;
pub const FEATURE_DIM: usize = 160;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("batch norm needs at least 2 values per channel in training mode, got {0}")]
    DegenerateBatch(usize),
    #[error("network expects {expected}^3 patches, got {found}^3")]
    WrongPatchSize { expected: usize, found: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("training needs at least two distinct labels")]
    SingleClass,
    #[error("{labels} labels for {patches} patches")]
    LengthMismatch { labels: usize, patches: usize },
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

#[cfg(test)]
mod tests;
