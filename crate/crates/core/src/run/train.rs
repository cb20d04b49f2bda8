//! Mini-batch training with per-epoch validation and best-checkpoint selection.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::predict::predict_probabilities;
use crate::augment::{apply_hwc, apply_plane, sample_d4, D4Element};
use crate::data::manifest::{few_shot_select, DatasetManifest, FewShotSpec, Role};
use crate::data::sample::SegmentationSample;
use crate::error::{Error, Result};
use crate::head::predict_mask;
use crate::metrics::{confusion, pool_counts};
use crate::model::SegModel;
use crate::objective::{batch_gradients, onecycle_lr, AdamW, PreparedSample};
use crate::params::Params;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_iou: Option<f64>,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<EpochLog>,
    /// Epoch (0-based) of the best validation score; the last epoch without validation data.
    pub best_epoch: usize,
    pub best_val_iou: Option<f64>,
    pub best: SegModel<f32>,
    pub last: SegModel<f32>,
    pub optimizer: AdamW<f32>,
}

/// Pooled validation IoU of `model` on `samples`.
pub fn validation_iou(model: &SegModel<f32>, samples: &[SegmentationSample], cfg: &RunConfig) -> Result<f64> {
    let counts = samples
        .iter()
        .map(|s| {
            let p = predict_probabilities(model, &s.image, cfg.input_scale)?;
            confusion(&predict_mask(p.view(), model.head.threshold), &s.mask, s.ignore.as_ref())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(pool_counts(&counts)?.iou_mode(cfg.iou_mode))
}

fn augmented(s: &PreparedSample<f32>, rng: &mut ChaCha8Rng) -> Result<PreparedSample<f32>> {
    let (h, w) = s.target.dim();
    let mut g = sample_d4(rng);
    while g.swaps_axes() && h != w {
        g = sample_d4(rng);
    }
    if g == D4Element::Identity {
        return Ok(s.clone());
    }
    Ok(PreparedSample {
        input: apply_hwc(g, s.input.view())?,
        target: apply_plane(g, s.target.view())?,
        ignore: s.ignore.as_ref().map(|m| apply_plane(g, m.view())).transpose()?,
    })
}

/// Train `model` for `epochs` epochs with the loss, optimiser, batch size,
/// augmentation and seed of `cfg`.
pub fn train_model(
    cfg: &RunConfig,
    mut model: SegModel<f32>,
    train: &[SegmentationSample],
    val: &[SegmentationSample],
    epochs: usize,
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::Config("no training samples".into()));
    }
    let patch = model.patch_size();
    let prepared: Vec<PreparedSample<f32>> = train
        .iter()
        .map(|s| PreparedSample::new(s, cfg.input_scale, patch))
        .collect();
    let steps_per_epoch = prepared.len().div_ceil(cfg.batch_size);
    let mut opt_cfg = cfg.optimizer.clone();
    opt_cfg.total_steps = epochs * steps_per_epoch;
    let mut opt = AdamW::new(opt_cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(1);

    let mut log = Vec::with_capacity(epochs);
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut best_val: Option<f64> = None;
    let mut step = 0;
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = chunk
                .iter()
                .map(|&i| {
                    if cfg.augment {
                        augmented(&prepared[i], &mut rng)
                    } else {
                        Ok(prepared[i].clone())
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let (loss, grads) = batch_gradients(&model, &batch, &cfg.loss, Some(&mut dropout_rng))
                .map_err(|e| match e {
                    Error::Training(m) => Error::Training(format!("epoch {epoch}, step {step}: {m}")),
                    other => other,
                })?;
            lr = onecycle_lr(step, &opt.config)?;
            opt.step(&mut model, &grads, lr)?;
            loss_sum += loss as f64 * chunk.len() as f64;
            step += 1;
        }
        let train_loss = loss_sum / prepared.len() as f64;
        let val_iou = if val.is_empty() {
            None
        } else {
            Some(validation_iou(&model, val, cfg)?)
        };
        log::info!("epoch {epoch}: loss {train_loss:.5}, val IoU {val_iou:?}, lr {lr:.2e}");
        let improved = match (val_iou, best_val) {
            (Some(v), Some(b)) => v > b,
            (Some(_), None) => true,
            (None, _) => true,
        };
        if improved {
            best = model.clone();
            best_epoch = epoch;
            best_val = val_iou;
        }
        log.push(EpochLog {
            epoch,
            train_loss,
            val_iou,
            lr,
        });
    }
    Ok(TrainOutcome {
        log,
        best_epoch,
        best_val_iou: best_val,
        best,
        last: model,
        optimizer: opt,
    })
}

#[derive(Serialize)]
struct TrainLogFile<'a> {
    run: usize,
    seed: u64,
    train_ids: Vec<&'a str>,
    trainable_params: usize,
    epochs: &'a [EpochLog],
    best_epoch: usize,
    best_val_iou: Option<f64>,
}

/// Config-driven training of every repetition. Writes `config.json` to the
/// output directory and `best.safetensors`, `last.safetensors` and
/// `train_log.json` to each `run-<i>` directory.
pub fn run_training(cfg: &RunConfig) -> Result<Vec<TrainOutcome>> {
    cfg.validate()?;
    let manifest = DatasetManifest::load(&cfg.manifest)?;
    let runs = cfg.default_runs();
    let n_split = manifest.split(Role::Train).len();
    let selections = (0..runs)
        .map(|r| match &cfg.few_shot {
            Some(spec) => few_shot_select(
                &manifest,
                &FewShotSpec {
                    k: spec.k,
                    seed: spec.seed + r as u64,
                    ids: spec.ids.clone(),
                },
            ),
            None => Ok(manifest.split(Role::Train)),
        })
        .collect::<Result<Vec<_>>>()?;
    if selections[0].is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let encoder = cfg.encoder.load()?;
    let val = manifest.load_split(Role::Val)?;
    create_dir(&cfg.output_dir)?;
    cfg.save(cfg.output_dir.join("config.json"))?;

    let mut outcomes = Vec::with_capacity(runs);
    for (run, records) in selections.iter().enumerate() {
        let seed = cfg.seed + run as u64;
        let run_cfg = RunConfig { seed, ..cfg.clone() };
        let train = records
            .iter()
            .map(|r| manifest.load_record(r))
            .collect::<Result<Vec<_>>>()?;
        let epochs = cfg.epochs_for(train.len(), n_split);
        let mut model = SegModel::new(encoder.clone(), &cfg.adapter, seed)?;
        model.order = cfg.head_order;
        model.head.threshold = cfg.threshold;
        log::info!("run {run}: {} samples, {epochs} epochs, {} trainable parameters", train.len(), model.num_params());
        let trainable_params = model.num_params();
        let outcome = train_model(&run_cfg, model, &train, &val, epochs)?;

        let dir = cfg.run_dir(run);
        create_dir(&dir)?;
        outcome.best.to_checkpoint()?.save(dir.join("best.safetensors"))?;
        let mut last = outcome.last.to_checkpoint()?;
        last.extend(outcome.optimizer.to_container()?)?;
        last.save(dir.join("last.safetensors"))?;
        let log_file = TrainLogFile {
            run,
            seed,
            train_ids: records.iter().map(|r| r.id.as_str()).collect(),
            trainable_params,
            epochs: &outcome.log,
            best_epoch: outcome.best_epoch,
            best_val_iou: outcome.best_val_iou,
        };
        let path = dir.join("train_log.json");
        std::fs::write(&path, serde_json::to_string_pretty(&log_file)?).map_err(|e| Error::io(&path, e))?;
        outcomes.push(outcome);
    }
    Ok(outcomes)
}

pub(crate) fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}
