//! Whole-scan prediction: tile, resize, encode, classify, resize back, stitch.

use ndarray::{Array2, Array3};

use crate::data::resize::{resize_hwc, resize_plane};
use crate::data::sample::{Mask, SegmentationSample};
use crate::data::tiling::{stitch, tile_image};
use crate::error::Result;
use crate::head::predict_mask;
use crate::model::{prepare_input, SegModel};

#[derive(Debug, Clone, PartialEq)]
pub struct PredictOptions {
    pub tile_size: usize,
    pub tile_resize: Option<usize>,
    pub input_scale: f64,
    /// Overrides the threshold stored with the head.
    pub threshold: Option<f64>,
}

impl Default for PredictOptions {
    fn default() -> Self {
        PredictOptions {
            tile_size: 448,
            tile_resize: Some(224),
            input_scale: 3.0,
            threshold: None,
        }
    }
}

/// Probabilities at the image's own resolution, encoding at `input_scale`.
pub fn predict_probabilities(model: &SegModel<f32>, image: &Array3<f32>, input_scale: f64) -> Result<Array2<f32>> {
    let (h, w, _) = image.dim();
    let input = prepare_input::<f32>(image, input_scale, model.patch_size());
    model.predict_proba(&input, h, w)
}

fn tile_probabilities(model: &SegModel<f32>, tile: &Array3<f32>, opts: &PredictOptions) -> Result<Array2<f32>> {
    let (h, w, _) = tile.dim();
    match opts.tile_resize {
        Some(side) if side != h || side != w => {
            let small = resize_hwc(tile.view(), side, side);
            let p = predict_probabilities(model, &small, opts.input_scale)?;
            Ok(resize_plane(p.view(), h, w))
        }
        _ => predict_probabilities(model, tile, opts.input_scale),
    }
}

/// Probability map for a scan of any size. Images smaller than a tile in
/// both directions are processed directly at their own resolution; everything
/// else is tiled and each tile resized to `tile_resize` before encoding.
pub fn predict_scan_probabilities(model: &SegModel<f32>, image: &Array3<f32>, opts: &PredictOptions) -> Result<Array2<f32>> {
    let (h, w, _) = image.dim();
    if h < opts.tile_size && w < opts.tile_size {
        return predict_probabilities(model, image, opts.input_scale);
    }
    let scan = SegmentationSample::new(image.clone(), Mask::from_elem((h, w), false), None, "scan")?;
    let (tiles, layout) = tile_image(&scan, opts.tile_size, opts.tile_size)?;
    let probs = tiles
        .iter()
        .map(|t| tile_probabilities(model, &t.image, opts))
        .collect::<Result<Vec<_>>>()?;
    stitch(&probs, &layout)
}

/// Binary mask for a scan; pixels marked in `ignore` are forced to background.
pub fn predict_scan(model: &SegModel<f32>, image: &Array3<f32>, ignore: Option<&Mask>, opts: &PredictOptions) -> Result<Mask> {
    let p = predict_scan_probabilities(model, image, opts)?;
    let mut mask = predict_mask(p.view(), opts.threshold.unwrap_or(model.head.threshold));
    if let Some(ig) = ignore {
        if ig.dim() != mask.dim() {
            return Err(crate::Error::Dimension(format!(
                "ignore mask {:?} vs scan {:?}",
                ig.dim(),
                mask.dim()
            )));
        }
        mask.zip_mut_with(ig, |m, &i| *m &= !i);
    }
    Ok(mask)
}
