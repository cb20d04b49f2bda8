//! Dataset- and run-level aggregation.

use serde::{Deserialize, Serialize};

use super::panoptic::PanopticReport;
use super::pixel::ConfusionCounts;
use crate::error::{Error, Result};

/// Pixel counts summed over images.
pub fn pool_counts(counts: &[ConfusionCounts]) -> Result<ConfusionCounts> {
    if counts.is_empty() {
        return Err(Error::Config("nothing to aggregate".into()));
    }
    let mut total = ConfusionCounts::default();
    counts.iter().for_each(|c| total.add(c));
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (n - 1); 0 for a single value.
    pub std: f64,
    pub n: usize,
}

pub fn mean_std(values: &[f64]) -> Result<MeanStd> {
    if values.is_empty() {
        return Err(Error::Config("nothing to aggregate".into()));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Ok(MeanStd { mean, std, n })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PanopticSummary {
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
}

/// Per-map scores averaged over maps.
pub fn mean_panoptic(reports: &[PanopticReport]) -> Result<PanopticSummary> {
    if reports.is_empty() {
        return Err(Error::Config("nothing to aggregate".into()));
    }
    let n = reports.len() as f64;
    let avg = |f: fn(&PanopticReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Ok(PanopticSummary {
        pq: avg(|r| r.pq),
        sq: avg(|r| r.sq),
        rq: avg(|r| r.rq),
    })
}
