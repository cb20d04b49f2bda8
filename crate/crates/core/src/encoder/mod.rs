//! Vision Transformer encoder producing a spatial grid of patch features.
//!
//! An `H x W x C` image is cut into non-overlapping `P x P` patches, each patch
//! is linearly embedded, a class token is prepended, positional embeddings are
//! added, and `L` pre-norm transformer blocks run full self-attention. After a
//! final LayerNorm the class token is dropped and the `N = HW / P^2` patch
//! tokens are reshaped to an `H/P x W/P x D` [`FeatureGrid`].

pub mod layers;
pub mod vit;
pub mod weights;

use ndarray::{s, Array2, Array3, ArrayView1, ArrayView2, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::data::resize::{resize_hwc, resize_hwc_adjoint};
use crate::error::{Error, Result};
use crate::real::Real;

pub use vit::{encode, EncoderCache, EncoderGradNeeds, ForwardOptions, Projection};
pub use weights::{BlockWeights, LayerNormWeights, LinearWeights, VitWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Tiny,
    Small,
    VitlCompat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub preset: Option<Preset>,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub num_heads: usize,
    pub mlp_ratio: f64,
    pub in_chans: usize,
    /// Patch grid the positional embeddings were trained for; other grids
    /// are served by bilinear interpolation.
    pub pos_grid: (usize, usize),
    /// Per-channel normalisation applied to `[0, 1]` pixels before patching.
    pub pixel_mean: Vec<f32>,
    pub pixel_std: Vec<f32>,
}

impl EncoderConfig {
    pub fn preset(p: Preset) -> Self {
        let (patch_size, embed_dim, depth, num_heads, pos_grid) = match p {
            Preset::Tiny => (4, 32, 2, 2, (4, 4)),
            Preset::Small => (8, 64, 4, 4, (14, 14)),
            Preset::VitlCompat => (16, 1024, 24, 16, (14, 14)),
        };
        let (pixel_mean, pixel_std) = match p {
            Preset::VitlCompat => (vec![0.485, 0.456, 0.406], vec![0.229, 0.224, 0.225]),
            _ => (vec![0.5; 3], vec![0.5; 3]),
        };
        EncoderConfig {
            preset: Some(p),
            patch_size,
            embed_dim,
            depth,
            num_heads,
            mlp_ratio: 4.0,
            in_chans: 3,
            pos_grid,
            pixel_mean,
            pixel_std,
        }
    }

    pub fn tiny() -> Self {
        Self::preset(Preset::Tiny)
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    pub fn mlp_dim(&self) -> usize {
        (self.embed_dim as f64 * self.mlp_ratio).round() as usize
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.in_chans
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.depth == 0 || self.embed_dim == 0 || self.num_heads == 0 {
            return Err(Error::Config("patch size, depth, width and heads must be >= 1".into()));
        }
        if self.embed_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} is not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        if self.pixel_mean.len() != self.in_chans || self.pixel_std.len() != self.in_chans {
            return Err(Error::Config("pixel mean/std must have one entry per input channel".into()));
        }
        if self.pos_grid.0 == 0 || self.pos_grid.1 == 0 {
            return Err(Error::Config("positional grid must be non-empty".into()));
        }
        Ok(())
    }
}

/// Encoder output: an `H/P x W/P x D` grid of patch features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid<F> {
    pub grid: Array3<F>,
}

impl<F: Real> FeatureGrid<F> {
    pub fn new(grid: Array3<F>) -> Self {
        FeatureGrid { grid }
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.grid.dim()
    }

    pub fn depth(&self) -> usize {
        self.grid.dim().2
    }

    /// Features as an `N x D` matrix in row-major cell order.
    pub fn as_rows(&self) -> Array2<F> {
        let (h, w, d) = self.grid.dim();
        self.grid.to_owned().into_shape_with_order((h * w, d)).unwrap()
    }
}

/// Split an image into flattened `P x P` patches.
///
/// Patch `(i, j)` of the block grid is row `i * (W / P) + j`. Inside a patch,
/// values are ordered row-major over pixels with channels interleaved:
/// column `(py * P + px) * C + c`.
pub fn patchify<F: Real>(image: ArrayView3<F>, patch: usize) -> Result<Array2<F>> {
    let (h, w, ch) = image.dim();
    if patch == 0 {
        return Err(Error::Config("patch size must be >= 1".into()));
    }
    if h % patch != 0 || w % patch != 0 {
        let pad_h = (patch - h % patch) % patch;
        let pad_w = (patch - w % patch) % patch;
        return Err(Error::Dimension(format!(
            "image {h}x{w} is not divisible by patch size {patch}; pad by {pad_h} rows and {pad_w} columns"
        )));
    }
    let (gh, gw) = (h / patch, w / patch);
    let mut out = Array2::zeros((gh * gw, patch * patch * ch));
    for bi in 0..gh {
        for bj in 0..gw {
            let mut row = out.row_mut(bi * gw + bj);
            let mut k = 0;
            for py in 0..patch {
                for px in 0..patch {
                    for c in 0..ch {
                        row[k] = image[[bi * patch + py, bj * patch + px, c]];
                        k += 1;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Build the token sequence: class token at row 0, then `patches @ E + bias`,
/// with `pos` (one row per token) added once.
pub fn embed_tokens<F: Real>(
    patches: ArrayView2<F>,
    projection: ArrayView2<F>,
    bias: ArrayView1<F>,
    pos: ArrayView2<F>,
    cls: ArrayView1<F>,
) -> Result<Array2<F>> {
    let (n, pd) = patches.dim();
    let (ep, d) = projection.dim();
    if ep != pd {
        return Err(Error::Dimension(format!(
            "projection has {ep} rows but patches have {pd} values"
        )));
    }
    if bias.len() != d || cls.len() != d {
        return Err(Error::Dimension(format!("bias/class token must have length {d}")));
    }
    if pos.dim() != (n + 1, d) {
        return Err(Error::Dimension(format!(
            "positional embedding is {:?}, expected ({}, {d})",
            pos.dim(),
            n + 1
        )));
    }
    let mut tokens = Array2::zeros((n + 1, d));
    tokens.row_mut(0).assign(&cls);
    let mut body = tokens.slice_mut(s![1.., ..]);
    body.assign(&patches.dot(&projection));
    body += &bias;
    tokens += &pos;
    Ok(tokens)
}

/// Positional embeddings for a `gh x gw` token grid, interpolating the stored
/// grid bilinearly when the sizes differ. Row 0 (class token) is untouched.
pub fn positional_for_grid<F: Real>(pos: ArrayView2<F>, base: (usize, usize), grid: (usize, usize)) -> Array2<F> {
    if base == grid {
        return pos.to_owned();
    }
    let d = pos.ncols();
    let body = pos
        .slice(s![1.., ..])
        .to_owned()
        .into_shape_with_order((base.0, base.1, d))
        .unwrap();
    let resized = resize_hwc(body.view(), grid.0, grid.1);
    let mut out = Array2::zeros((1 + grid.0 * grid.1, d));
    out.row_mut(0).assign(&pos.row(0));
    out.slice_mut(s![1.., ..])
        .assign(&resized.into_shape_with_order((grid.0 * grid.1, d)).unwrap());
    out
}

/// Adjoint of [`positional_for_grid`].
pub fn positional_for_grid_adjoint<F: Real>(grad: ArrayView2<F>, base: (usize, usize), grid: (usize, usize)) -> Array2<F> {
    if base == grid {
        return grad.to_owned();
    }
    let d = grad.ncols();
    let body = grad
        .slice(s![1.., ..])
        .to_owned()
        .into_shape_with_order((grid.0, grid.1, d))
        .unwrap();
    let back = resize_hwc_adjoint(body.view(), base.0, base.1);
    let mut out = Array2::zeros((1 + base.0 * base.1, d));
    out.row_mut(0).assign(&grad.row(0));
    out.slice_mut(s![1.., ..])
        .assign(&back.into_shape_with_order((base.0 * base.1, d)).unwrap());
    out
}

/// Apply per-channel mean/std normalisation.
pub fn normalize_pixels<F: Real>(image: ArrayView3<F>, mean: &[f32], std: &[f32]) -> Result<Array3<F>> {
    let ch = image.dim().2;
    if mean.len() != ch || std.len() != ch {
        return Err(Error::Dimension(format!(
            "image has {ch} channels but normalisation has {}",
            mean.len()
        )));
    }
    let mut out = image.to_owned();
    for (c, mut plane) in out.axis_iter_mut(ndarray::Axis(2)).enumerate() {
        let m = F::from_f64_lossy(mean[c] as f64);
        let s = F::from_f64_lossy(std[c] as f64);
        plane.mapv_inplace(|v| (v - m) / s);
    }
    Ok(out)
}
