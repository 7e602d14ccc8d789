//! Raster I/O, composite construction, patch grids, stitching, and the
//! synthetic scene generator.

pub mod composite;
pub mod grid;
pub mod patches;
pub mod raster;
pub mod synth;

pub use composite::{build_composite, compute_ndvi, min_max_scale};
pub use grid::{stitch_predictions, PatchGrid};
pub use patches::{assemble_batch, crop_labels, crop_tensor, extract_patches, PatchRef, TileTensors};
pub use raster::{ChannelRole, CountingReader, Plane, RasterTile};
pub use synth::{class_mean, synth_scene, SynthScene, NUM_CLASSES};
