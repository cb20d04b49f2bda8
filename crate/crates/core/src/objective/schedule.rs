//! One-cycle learning-rate policy with cosine segments.

use crate::error::{Error, Result};

use super::optim::OptimizerConfig;

/// Cosine interpolation from `from` (t = 0) to `to` (t = 1). Endpoints are exact.
fn cosine(from: f64, to: f64, t: f64) -> f64 {
    let w = 0.5 * (1.0 + (std::f64::consts::PI * t).cos());
    from * w + to * (1.0 - w)
}

/// Step at which the learning rate peaks.
pub fn peak_step(cfg: &OptimizerConfig) -> usize {
    (cfg.peak_fraction * cfg.total_steps as f64).round() as usize
}

/// Learning rate at `step` in `0..=total_steps`: `lr_init` rising to `lr_max`
/// at the peak, then annealing to `lr_final`.
pub fn onecycle_lr(step: usize, cfg: &OptimizerConfig) -> Result<f64> {
    let total = cfg.total_steps;
    if step > total {
        return Err(Error::OutOfRange(format!("step {step} beyond total_steps {total}")));
    }
    let peak = peak_step(cfg);
    if step < peak {
        Ok(cosine(cfg.lr_init, cfg.lr_max, step as f64 / peak as f64))
    } else if peak == total {
        Ok(cfg.lr_max)
    } else {
        Ok(cosine(cfg.lr_max, cfg.lr_final, (step - peak) as f64 / (total - peak) as f64))
    }
}
