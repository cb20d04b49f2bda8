//! Panoptic quality over connected components: segments match when their
//! IoU exceeds 0.5, which makes every match unique.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::components::{connected_components, Components, Connectivity};
use crate::data::sample::Mask;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentMatch {
    /// Component label in the prediction (1-based).
    pub pred: u32,
    /// Component label in the reference (1-based).
    pub reference: u32,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanopticReport {
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub matches: Vec<SegmentMatch>,
    pub unmatched_pred: usize,
    pub unmatched_ref: usize,
}

impl PanopticReport {
    pub fn tp(&self) -> usize {
        self.matches.len()
    }

    /// Scores from a list of matches and the segment totals on each side.
    pub fn from_matches(matches: Vec<SegmentMatch>, n_pred: usize, n_ref: usize) -> Self {
        let tp = matches.len();
        let (fp, fn_) = (n_pred - tp, n_ref - tp);
        let (sq, rq) = if n_pred == 0 && n_ref == 0 {
            (1.0, 1.0)
        } else if tp == 0 {
            (0.0, 0.0)
        } else {
            let sq = matches.iter().map(|m| m.iou).sum::<f64>() / tp as f64;
            (sq, tp as f64 / (tp as f64 + 0.5 * fp as f64 + 0.5 * fn_ as f64))
        };
        PanopticReport {
            pq: sq * rq,
            sq,
            rq,
            matches,
            unmatched_pred: fp,
            unmatched_ref: fn_,
        }
    }
}

/// Match two labelings of the same domain.
pub fn panoptic_quality(pred: &Components, reference: &Components) -> Result<PanopticReport> {
    if pred.labels.dim() != reference.labels.dim() {
        return Err(Error::Dimension(format!(
            "prediction {:?} vs reference {:?}",
            pred.labels.dim(),
            reference.labels.dim()
        )));
    }
    let mut inter: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    for (&p, &r) in pred.labels.iter().zip(reference.labels.iter()) {
        if p > 0 && r > 0 {
            *inter.entry((p, r)).or_default() += 1;
        }
    }
    let matches = inter
        .into_iter()
        .filter_map(|((p, r), i)| {
            let union = pred.areas[p as usize - 1] + reference.areas[r as usize - 1] - i;
            let iou = i as f64 / union as f64;
            (iou > 0.5).then_some(SegmentMatch { pred: p, reference: r, iou })
        })
        .collect();
    Ok(PanopticReport::from_matches(matches, pred.count, reference.count))
}

/// Components are extracted after ignored pixels are cleared on both sides.
pub fn panoptic_from_masks(pred: &Mask, reference: &Mask, ignore: Option<&Mask>, conn: Connectivity) -> Result<PanopticReport> {
    if pred.dim() != reference.dim() || ignore.is_some_and(|m| m.dim() != pred.dim()) {
        return Err(Error::Dimension(format!(
            "prediction {:?} vs reference {:?}",
            pred.dim(),
            reference.dim()
        )));
    }
    let clear = |m: &Mask| match ignore {
        Some(ig) => ndarray::Zip::from(m).and(ig).map_collect(|&v, &i| v && !i),
        None => m.clone(),
    };
    panoptic_quality(
        &connected_components(&clear(pred), conn),
        &connected_components(&clear(reference), conn),
    )
}
