//! Pixel metrics, connected components and panoptic quality.

pub mod aggregate;
pub mod components;
pub mod panoptic;
pub mod pixel;

pub use aggregate::{mean_panoptic, mean_std, pool_counts, MeanStd, PanopticSummary};
pub use components::{connected_components, Components, Connectivity};
pub use panoptic::{panoptic_from_masks, panoptic_quality, PanopticReport, SegmentMatch};
pub use pixel::{confusion, pixel_metrics, ConfusionCounts, IouMode, PixelMetrics};
