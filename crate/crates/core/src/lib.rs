//! Few-shot semantic segmentation of map imagery.
//!
//! A Vision Transformer turns an image into a grid of patch features, optional
//! low-rank adapters specialise the attention projections, and a linear probe
//! classifies bilinearly upsampled features per pixel. Training minimises a
//! weighted focal + dice loss with AdamW under a one-cycle schedule; evaluation
//! reports pixel F1/IoU and panoptic quality over connected components.
//!
//! Everything is generic over [`Real`] so the same code runs in `f32` for
//! training and `f64` for gradient checks.

pub mod adapters;
pub mod augment;
pub mod data;
pub mod encoder;
pub mod error;
pub mod featviz;
pub mod head;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod params;
pub mod real;
pub mod run;

pub use error::{Error, Result};
pub use real::Real;

/// Environment variable that forces single-threaded, bit-reproducible execution.
pub const TEST_MODE_ENV: &str = "CARTOSEG_TEST_MODE";

/// True when `CARTOSEG_TEST_MODE=1` is set.
pub fn test_mode() -> bool {
    std::env::var(TEST_MODE_ENV).map(|v| v == "1").unwrap_or(false)
}
