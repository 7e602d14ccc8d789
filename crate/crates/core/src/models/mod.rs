//! Model architectures composed from the layer primitives.

pub mod blocks;
pub mod checkpoint;
pub mod correction;
pub mod fusenet;
pub mod network;
pub mod segnet;

pub use blocks::{BlockOrder, ConvBlock, Stage};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use correction::{BaseModel, Modality, ResidualCorrection};
pub use fusenet::{FuseNet, FuseNetConfig, FusionMode};
pub use network::{Architecture, NetOutput, Network};
pub use segnet::{SegNet, SegNetConfig, SegNetOutput, BASE_WIDTHS, STAGE_BLOCKS};
