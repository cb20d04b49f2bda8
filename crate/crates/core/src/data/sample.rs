use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

/// Binary raster; `true` is foreground (or "ignored" for ignore masks).
pub type Mask = Array2<bool>;

/// An image tile with its annotation, the unit of training and evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationSample {
    /// `H x W x C`, values in `[0, 1]`.
    pub image: Array3<f32>,
    pub mask: Mask,
    /// Pixels excluded from loss and metrics (e.g. outside a map frame).
    pub ignore: Option<Mask>,
    pub source: String,
    /// Top-left corner of this tile within its source scan.
    pub origin: (usize, usize),
}

impl SegmentationSample {
    pub fn new(image: Array3<f32>, mask: Mask, ignore: Option<Mask>, source: impl Into<String>) -> Result<Self> {
        let s = SegmentationSample {
            image,
            mask,
            ignore,
            source: source.into(),
            origin: (0, 0),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn height(&self) -> usize {
        self.image.dim().0
    }

    pub fn width(&self) -> usize {
        self.image.dim().1
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w, _) = self.image.dim();
        if self.mask.dim() != (h, w) {
            return Err(Error::Dimension(format!(
                "mask {:?} does not match image {h}x{w} in `{}`",
                self.mask.dim(),
                self.source
            )));
        }
        if let Some(ig) = &self.ignore {
            if ig.dim() != (h, w) {
                return Err(Error::Dimension(format!(
                    "ignore mask {:?} does not match image {h}x{w} in `{}`",
                    ig.dim(),
                    self.source
                )));
            }
        }
        Ok(())
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.mask.iter().filter(|&&m| m).count() as f64 / self.mask.len().max(1) as f64
    }
}
