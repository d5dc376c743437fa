//! NPNet: a non-pooling encoder with channel attention and dilated feature
//! enhancement for binary medical image segmentation, with a from-scratch
//! tensor core, trainer, data loading, metrics and command-line front end.

pub mod cli;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{CheckpointError, Error, Result};
pub use model::{AttentionKind, Model, ModelConfig};
pub use tensor::{LabelMap, Tensor};
