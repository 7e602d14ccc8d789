//! Layer primitives with explicit forward and backward passes.
//!
//! Each layer caches what its backward pass needs during forward; a layer
//! instance therefore belongs to one thread at a time, while distinct
//! instances are independent.

pub mod batchnorm;
pub mod concat;
pub mod conv;
pub mod gradcheck;
pub mod oracle64;
pub mod pool;
pub mod relu;
pub mod upsample;

pub use batchnorm::{BatchNorm2d, Mode};
pub use concat::{channel_concat, channel_split};
pub use conv::Conv2d;
pub use gradcheck::{gradient_check, Differentiable, GradCheckConfig, GradCheckReport};
pub use oracle64::{Forward64, Map64};
pub use pool::{max_pool2, max_unpool2, max_unpool2_backward, PoolIndices};
pub use relu::Relu;
pub use upsample::{bilinear_upsample, bilinear_upsample_backward};
