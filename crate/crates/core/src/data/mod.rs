//! Samples, manifests, tiling, resampling, synthetic data and tensor files.

pub mod container;
pub mod manifest;
pub mod raster;
pub mod resize;
pub mod sample;
pub mod synth;
pub mod tiling;

pub use container::{Dtype, TensorContainer};
pub use manifest::{few_shot_select, DatasetManifest, FewShotSpec, Role, SampleRecord};
pub use resize::{resize_bilinear, resize_hwc, resize_plane};
pub use sample::{Mask, SegmentationSample};
pub use synth::{synth_generate, synth_scan, SynthClass};
pub use tiling::{stitch, stitch_average, stitch_masks, tile_image, TileLayout, TileSpan};
