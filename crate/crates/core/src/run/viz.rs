//! PCA rendering of encoder features for a single image.

use ndarray::Array3;

use crate::encoder::vit::encode;
use crate::encoder::VitWeights;
use crate::error::Result;
use crate::featviz::{fit_grid, project_to_rgb, upsample_nearest};
use crate::model::{prepare_input, SegModel};

/// RGB rendering of the first three principal components of the patch
/// features, at the image's resolution.
pub fn feature_rgb(model: &SegModel<f32>, image: &Array3<f32>, input_scale: f64) -> Result<Array3<f32>> {
    let (h, w, _) = image.dim();
    let grid = model.features(&prepare_input(image, input_scale, model.patch_size()))?;
    let basis = fit_grid(&grid)?;
    Ok(upsample_nearest(&project_to_rgb(&grid, &basis)?, h, w))
}

/// Same for a bare encoder without adapters.
pub fn encoder_rgb(weights: &VitWeights<f32>, image: &Array3<f32>, input_scale: f64) -> Result<Array3<f32>> {
    let (h, w, _) = image.dim();
    let grid = encode(&prepare_input(image, input_scale, weights.config.patch_size), weights, None)?;
    let basis = fit_grid(&grid)?;
    Ok(upsample_nearest(&project_to_rgb(&grid, &basis)?, h, w))
}
