//! Linear probe: bilinear feature upsampling, per-pixel linear map, sigmoid.

use ndarray::{Array0, Array1, Array2, Array3, ArrayView2, ArrayView3, ArrayViewD, ArrayViewMutD, Axis};
use serde::{Deserialize, Serialize};

use crate::data::resize::{resize_hwc, resize_plane, resize_plane_adjoint};
use crate::data::sample::Mask;
use crate::encoder::FeatureGrid;
use crate::error::{Error, Result};
use crate::params::Params;
use crate::real::Real;

/// Where the bilinear upsampling sits relative to the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadOrder {
    /// Upsample the feature grid, then classify each pixel.
    #[default]
    UpsampleFeatures,
    /// Classify grid cells, then upsample the logits.
    UpsampleLogits,
    /// Classify grid cells, apply the sigmoid, then upsample probabilities.
    UpsampleProbabilities,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeHead<F> {
    pub w: Array1<F>,
    pub b: Array0<F>,
    pub threshold: f64,
}

impl<F: Real> ProbeHead<F> {
    pub fn zeros(depth: usize) -> Self {
        ProbeHead {
            w: Array1::zeros(depth),
            b: Array0::zeros(()),
            threshold: 0.5,
        }
    }

    pub fn new(w: Array1<F>, b: F) -> Self {
        ProbeHead {
            w,
            b: Array0::from_elem((), b),
            threshold: 0.5,
        }
    }

    pub fn bias(&self) -> F {
        self.b[()]
    }
}

impl<F: Real> Params<F> for ProbeHead<F> {
    fn visit(&self, f: &mut dyn FnMut(&str, ArrayViewD<'_, F>)) {
        f("head.w", self.w.view().into_dyn());
        f("head.b", self.b.view().into_dyn());
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ArrayViewMutD<'_, F>)) {
        f("head.w", self.w.view_mut().into_dyn());
        f("head.b", self.b.view_mut().into_dyn());
    }
}

pub fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// Bilinearly upsample a feature grid to `h x w` (half-pixel centres).
pub fn upsample_features<F: Real>(grid: &FeatureGrid<F>, h: usize, w: usize) -> Result<Array3<F>> {
    let (gh, gw, _) = grid.dim();
    if h < gh || w < gw {
        return Err(Error::Dimension(format!(
            "cannot upsample a {gh}x{gw} grid to the smaller {h}x{w}; resize the input instead"
        )));
    }
    Ok(resize_hwc(grid.grid.view(), h, w))
}

fn check_depth<F: Real>(depth: usize, head: &ProbeHead<F>) -> Result<()> {
    if depth != head.w.len() {
        return Err(Error::Dimension(format!(
            "features have depth {depth} but the probe expects {}",
            head.w.len()
        )));
    }
    Ok(())
}

/// Per-pixel logits `z . w + b`.
pub fn logits<F: Real>(dense: ArrayView3<F>, head: &ProbeHead<F>) -> Result<Array2<F>> {
    let (h, w, d) = dense.dim();
    check_depth(d, head)?;
    let flat = dense.to_shape((h * w, d)).unwrap();
    let mut z = flat.dot(&head.w);
    z += head.bias();
    Ok(z.into_shape_with_order((h, w)).unwrap())
}

/// Per-pixel probabilities `sigmoid(z . w + b)`.
pub fn classify<F: Real>(dense: ArrayView3<F>, head: &ProbeHead<F>) -> Result<Array2<F>> {
    Ok(logits(dense, head)?.mapv(sigmoid))
}

/// Binarise with a strict `p > threshold`.
pub fn predict_mask<F: Real>(probabilities: ArrayView2<F>, threshold: f64) -> Mask {
    probabilities.mapv(|p| p.to_f64_lossy() > threshold)
}

/// Logits at `h x w` for the given ordering (pre-sigmoid). For
/// [`HeadOrder::UpsampleProbabilities`] use [`probabilities`].
pub fn dense_logits<F: Real>(grid: &FeatureGrid<F>, head: &ProbeHead<F>, h: usize, w: usize, order: HeadOrder) -> Result<Array2<F>> {
    match order {
        HeadOrder::UpsampleFeatures => logits(upsample_features(grid, h, w)?.view(), head),
        HeadOrder::UpsampleLogits | HeadOrder::UpsampleProbabilities => {
            let coarse = logits(grid.grid.view(), head)?;
            let (gh, gw) = coarse.dim();
            if h < gh || w < gw {
                return Err(Error::Dimension(format!("cannot upsample {gh}x{gw} logits to {h}x{w}")));
            }
            Ok(resize_plane(coarse.view(), h, w))
        }
    }
}

/// Probability map at `h x w`.
pub fn probabilities<F: Real>(grid: &FeatureGrid<F>, head: &ProbeHead<F>, h: usize, w: usize, order: HeadOrder) -> Result<Array2<F>> {
    match order {
        HeadOrder::UpsampleProbabilities => {
            let coarse = classify(grid.grid.view(), head)?;
            Ok(resize_plane(coarse.view(), h, w))
        }
        _ => Ok(dense_logits(grid, head, h, w, order)?.mapv(sigmoid)),
    }
}

/// Gradients of the probe given `dlogits` at output resolution, for the
/// logit-space orderings. Returns `(dgrid, dw, db)`.
///
/// Uses the adjoint of the upsampling, so the dense `h x w x D` features are
/// never materialised: `dgrid = up^T(dlogits) ⊗ w`, `dw = Σ grid ⊙ up^T(dlogits)`.
pub fn backward<F: Real>(grid: &FeatureGrid<F>, head: &ProbeHead<F>, dlogits: ArrayView2<F>) -> (Array3<F>, Array1<F>, F) {
    let (gh, gw, d) = grid.dim();
    let coarse = resize_plane_adjoint(dlogits, gh, gw);
    let db = dlogits.sum();
    let flat = grid.grid.to_shape((gh * gw, d)).unwrap();
    let cflat = coarse.to_shape(gh * gw).unwrap();
    let dw = flat.t().dot(&cflat);
    let mut dgrid = Array3::zeros((gh, gw, d));
    for ((y, x), &c) in coarse.indexed_iter() {
        dgrid.index_axis_mut(Axis(0), y)
            .index_axis_mut(Axis(0), x)
            .assign(&head.w.mapv(|v| v * c));
    }
    (dgrid, dw, db)
}
