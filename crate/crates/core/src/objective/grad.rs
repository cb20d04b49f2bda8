//! Batch loss and gradients: per-sample backward passes, averaged in order.

use ndarray::Array3;
use rand_chacha::ChaCha8Rng;

use crate::data::sample::{Mask, SegmentationSample};
use crate::error::{Error, Result};
use crate::model::{prepare_input, ModelGrads, SegModel};
use crate::real::Real;

use super::loss::LossConfig;

/// A sample resized to encoder resolution; targets stay at label resolution.
#[derive(Debug, Clone)]
pub struct PreparedSample<F> {
    pub input: Array3<F>,
    pub target: Mask,
    pub ignore: Option<Mask>,
}

impl<F: Real> PreparedSample<F> {
    pub fn new(sample: &SegmentationSample, input_scale: f64, patch: usize) -> Self {
        PreparedSample {
            input: prepare_input(&sample.image, input_scale, patch),
            target: sample.mask.clone(),
            ignore: sample.ignore.clone(),
        }
    }
}

/// Mean loss over the batch and the gradient of that mean.
///
/// Samples are processed sequentially, so the reduction order is fixed.
pub fn batch_gradients<F: Real>(
    model: &SegModel<F>,
    batch: &[PreparedSample<F>],
    loss: &LossConfig,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<(F, ModelGrads<F>)> {
    if batch.is_empty() {
        return Err(Error::Training("empty batch".into()));
    }
    let mut total = F::zero();
    let mut grads = model.zero_grads();
    for (i, s) in batch.iter().enumerate() {
        let (l, g) = model
            .loss_and_grads(&s.input, &s.target, s.ignore.as_ref(), loss, rng.as_deref_mut())
            .map_err(|e| match e {
                Error::Training(msg) => Error::Training(format!("batch item {i}: {msg}")),
                other => other,
            })?;
        total += l;
        grads.add_assign(&g);
    }
    let n = F::of(batch.len());
    grads.scale(F::one() / n);
    let mean = total / n;
    if !mean.is_finite() || !grads.norm().is_finite() {
        return Err(Error::Training(format!(
            "non-finite loss or gradient (loss {mean:?}, |g| {})",
            grads.norm()
        )));
    }
    Ok((mean, grads))
}
