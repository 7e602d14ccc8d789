//! Dense semantic-labeling engine: an encoder-decoder segmentation network
//! with pooling-index unpooling, multi-scale deep supervision, two early
//! multi-modal fusion schemes, a late residual-correction ensemble, and the
//! tile-based train/predict/evaluate pipeline around them.
//!
//! Everything is seeded and single-pass deterministic: identical
//! configuration and seed reproduce identical weights, checkpoints, and
//! predictions bit for bit.

pub mod error;
pub mod gemm;
pub mod infer;
pub mod init;
pub mod data;
pub mod layers;
pub mod metrics;
pub mod models;
pub mod train;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{softmax_channels, LabelMap, Parameter, Tensor4, IGNORE_LABEL};
