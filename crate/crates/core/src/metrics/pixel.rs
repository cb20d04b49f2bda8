//! Confusion counts, F1 and IoU for binary masks.

use serde::{Deserialize, Serialize};

use crate::data::sample::Mask;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

/// How a single "IoU" number is reported.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IouMode {
    /// Foreground IoU only.
    #[default]
    Foreground,
    /// Mean of foreground and background IoU.
    Macro,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

impl ConfusionCounts {
    pub fn evaluated(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `2TP / (2TP + FP + FN)`; 1 when both masks are empty.
    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    /// Foreground IoU `TP / (TP + FP + FN)`; 1 when both masks are empty.
    pub fn iou(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp + self.fn_)
    }

    pub fn background_iou(&self) -> f64 {
        ratio(self.tn, self.tn + self.fp + self.fn_)
    }

    pub fn iou_mode(&self, mode: IouMode) -> f64 {
        match mode {
            IouMode::Foreground => self.iou(),
            IouMode::Macro => 0.5 * (self.iou() + self.background_iou()),
        }
    }

    pub fn add(&mut self, o: &ConfusionCounts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }
}

pub fn confusion(pred: &Mask, reference: &Mask, ignore: Option<&Mask>) -> Result<ConfusionCounts> {
    if pred.dim() != reference.dim() {
        return Err(Error::Dimension(format!(
            "prediction {:?} vs reference {:?}",
            pred.dim(),
            reference.dim()
        )));
    }
    if let Some(ig) = ignore {
        if ig.dim() != pred.dim() {
            return Err(Error::Dimension(format!("ignore mask {:?} vs {:?}", ig.dim(), pred.dim())));
        }
    }
    let mut c = ConfusionCounts::default();
    for (idx, (&p, &r)) in pred.indexed_iter().map(|(i, p)| (i, (p, &reference[i]))) {
        if ignore.is_some_and(|m| m[idx]) {
            continue;
        }
        match (p, r) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelMetrics {
    pub f1: f64,
    pub iou: f64,
}

pub fn pixel_metrics(pred: &Mask, reference: &Mask, ignore: Option<&Mask>) -> Result<PixelMetrics> {
    let c = confusion(pred, reference, ignore)?;
    Ok(PixelMetrics { f1: c.f1(), iou: c.iou() })
}
