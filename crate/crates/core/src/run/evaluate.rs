//! Per-image and dataset-level metrics, CSV and JSON reports.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::predict::{predict_scan, PredictOptions};
use crate::data::sample::SegmentationSample;
use crate::error::{Error, Result};
use crate::metrics::{
    confusion, connected_components, mean_panoptic, mean_std, panoptic_quality, pool_counts, ConfusionCounts, Connectivity,
    IouMode, MeanStd, PanopticReport, PanopticSummary,
};
use crate::model::SegModel;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub predict: PredictOptions,
    pub panoptic: bool,
    pub connectivity: Connectivity,
    /// Components smaller than this are dropped before matching.
    pub min_area: usize,
    pub iou_mode: IouMode,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            predict: PredictOptions::default(),
            panoptic: false,
            connectivity: Connectivity::Eight,
            min_area: 0,
            iou_mode: IouMode::Foreground,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRow {
    pub id: String,
    pub counts: ConfusionCounts,
    pub f1: f64,
    pub iou: f64,
    pub panoptic: Option<PanopticReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ImageRow>,
    /// Counts pooled over all images; `f1` and `iou` derive from them.
    pub pooled: ConfusionCounts,
    pub f1: f64,
    pub iou: f64,
    /// Per-image scores averaged over images.
    pub panoptic: Option<PanopticSummary>,
}

fn panoptic_for(pred: &crate::data::sample::Mask, s: &SegmentationSample, opts: &EvalOptions) -> Result<PanopticReport> {
    let clear = |m: &crate::data::sample::Mask| match &s.ignore {
        Some(ig) => ndarray::Zip::from(m).and(ig).map_collect(|&v, &i| v && !i),
        None => m.clone(),
    };
    let comps = |m| {
        let c = connected_components(&clear(m), opts.connectivity);
        if opts.min_area > 1 {
            c.filter_min_area(opts.min_area)
        } else {
            c
        }
    };
    panoptic_quality(&comps(pred), &comps(&s.mask))
}

pub fn evaluate_samples(model: &SegModel<f32>, samples: &[SegmentationSample], opts: &EvalOptions) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Config("evaluation split is empty".into()));
    }
    let mut rows = Vec::with_capacity(samples.len());
    for s in samples {
        let pred = predict_scan(model, &s.image, None, &opts.predict)?;
        let counts = confusion(&pred, &s.mask, s.ignore.as_ref())?;
        let panoptic = opts.panoptic.then(|| panoptic_for(&pred, s, opts)).transpose()?;
        rows.push(ImageRow {
            id: s.source.clone(),
            counts,
            f1: counts.f1(),
            iou: counts.iou_mode(opts.iou_mode),
            panoptic,
        });
    }
    let pooled = pool_counts(&rows.iter().map(|r| r.counts).collect::<Vec<_>>())?;
    let panoptic = if opts.panoptic {
        let reports: Vec<PanopticReport> = rows.iter().filter_map(|r| r.panoptic.clone()).collect();
        Some(mean_panoptic(&reports)?)
    } else {
        None
    };
    Ok(EvalReport {
        rows,
        pooled,
        f1: pooled.f1(),
        iou: pooled.iou_mode(opts.iou_mode),
        panoptic,
    })
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl EvalReport {
    /// One row per image and a final `all` row with pooled pixel metrics and mean PQ.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,tp,fp,fn,tn,f1,iou,pq,sq,rq\n");
        for r in &self.rows {
            let c = r.counts;
            let p = r.panoptic.as_ref();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.6},{:.6},{},{},{}",
                csv_field(&r.id),
                c.tp,
                c.fp,
                c.fn_,
                c.tn,
                r.f1,
                r.iou,
                opt(p.map(|p| p.pq)),
                opt(p.map(|p| p.sq)),
                opt(p.map(|p| p.rq))
            );
        }
        let c = self.pooled;
        let p = self.panoptic.as_ref();
        let _ = writeln!(
            out,
            "all,{},{},{},{},{:.6},{:.6},{},{},{}",
            c.tp,
            c.fp,
            c.fn_,
            c.tn,
            self.f1,
            self.iou,
            opt(p.map(|p| p.pq)),
            opt(p.map(|p| p.sq)),
            opt(p.map(|p| p.rq))
        );
        out
    }

    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        super::train::create_dir(dir)?;
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let json = dir.join(format!("{stem}.json"));
        std::fs::write(&json, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&json, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunsSummary {
    pub f1: MeanStd,
    pub iou: MeanStd,
    pub pq: Option<MeanStd>,
}

/// Mean and standard deviation of the dataset-level scores of repeated runs.
pub fn summarize_runs(reports: &[EvalReport]) -> Result<RunsSummary> {
    let pick = |f: fn(&EvalReport) -> f64| reports.iter().map(f).collect::<Vec<_>>();
    let pq: Option<Vec<f64>> = reports.iter().map(|r| r.panoptic.map(|p| p.pq)).collect();
    Ok(RunsSummary {
        f1: mean_std(&pick(|r| r.f1))?,
        iou: mean_std(&pick(|r| r.iou))?,
        pq: pq.map(|v| mean_std(&v)).transpose()?,
    })
}

impl RunsSummary {
    pub fn to_csv(&self, reports: &[EvalReport]) -> String {
        let mut out = String::from("run,f1,iou,pq\n");
        for (i, r) in reports.iter().enumerate() {
            let _ = writeln!(out, "{i},{:.6},{:.6},{}", r.f1, r.iou, opt(r.panoptic.map(|p| p.pq)));
        }
        let ms = |m: &MeanStd| format!("{:.6}±{:.6}", m.mean, m.std);
        let _ = writeln!(
            out,
            "mean±std,{},{},{}",
            ms(&self.f1),
            ms(&self.iou),
            self.pq.as_ref().map(ms).unwrap_or_default()
        );
        out
    }
}

/// Evaluate each checkpoint on `samples`, writing `eval-run-<i>.{csv,json}`
/// and, for several checkpoints, `runs.csv` with a mean ± std row.
pub fn evaluate_checkpoints(
    checkpoints: &[std::path::PathBuf],
    samples: &[SegmentationSample],
    opts: &EvalOptions,
    out_dir: &Path,
) -> Result<(Vec<EvalReport>, RunsSummary)> {
    if checkpoints.is_empty() {
        return Err(Error::Config("no checkpoints to evaluate".into()));
    }
    let mut reports = Vec::with_capacity(checkpoints.len());
    for (i, path) in checkpoints.iter().enumerate() {
        let model = SegModel::from_checkpoint(&crate::data::container::TensorContainer::load(path)?)?;
        let report = evaluate_samples(&model, samples, opts)?;
        report.write(out_dir, &format!("eval-run-{i}"))?;
        reports.push(report);
    }
    let summary = summarize_runs(&reports)?;
    if reports.len() > 1 {
        let p = out_dir.join("runs.csv");
        std::fs::write(&p, summary.to_csv(&reports)).map_err(|e| Error::io(&p, e))?;
    }
    Ok((reports, summary))
}
