//! Loss, optimizer, schedule, and the epoch loop.

pub mod epoch;
pub mod loss;
pub mod sgd;

pub use epoch::{train_epoch, EpochStats, TrainSettings};
pub use loss::{class_weights, cross_entropy_loss, downsample_labels, LossConfig, LossOutput};
pub use sgd::{lr_at_epoch, sgd_step, SgdConfig};
