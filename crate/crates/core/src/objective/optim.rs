//! AdamW with decoupled weight decay.

use std::collections::BTreeMap;

use ndarray::{ArrayD, Zip};
use serde::{Deserialize, Serialize};

use crate::data::container::TensorContainer;
use crate::error::{Error, Result};
use crate::params::Params;
use crate::real::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub lr_init: f64,
    pub lr_max: f64,
    pub lr_final: f64,
    /// Fraction of the run spent warming up to `lr_max`.
    pub peak_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Number of optimiser steps in the whole run; set by the trainer.
    pub total_steps: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr_init: 1e-4,
            lr_max: 1e-3,
            lr_final: 1e-6,
            peak_fraction: 0.3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            total_steps: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr_init > 0.0
            && self.lr_max > 0.0
            && self.lr_final >= 0.0
            && (0.0..=1.0).contains(&self.peak_fraction)
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimiser settings: {self:?}")))
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamW<F> {
    pub config: OptimizerConfig,
    step: u64,
    moments: BTreeMap<String, (ArrayD<F>, ArrayD<F>)>,
}

impl<F: Real> AdamW<F> {
    pub fn new(config: OptimizerConfig) -> Self {
        AdamW {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of `params` with `grads` (same names, same order) at learning rate `lr`.
    pub fn step(&mut self, params: &mut dyn Params<F>, grads: &dyn Params<F>, lr: f64) -> Result<()> {
        let mut gmap: BTreeMap<String, ArrayD<F>> = BTreeMap::new();
        grads.visit(&mut |name, g| {
            gmap.insert(name.to_string(), g.to_owned());
        });
        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let bc1 = F::from_f64_lossy(1.0 - c.beta1.powi(t));
        let bc2 = F::from_f64_lossy(1.0 - c.beta2.powi(t));
        let (b1, b2) = (F::from_f64_lossy(c.beta1), F::from_f64_lossy(c.beta2));
        let eps = F::from_f64_lossy(c.eps);
        let lr_f = F::from_f64_lossy(lr);
        let decay = F::one() - F::from_f64_lossy(lr * c.weight_decay);
        let one = F::one();
        let moments = &mut self.moments;
        let mut err = None;
        params.visit_mut(&mut |name, mut p| {
            if err.is_some() {
                return;
            }
            let Some(g) = gmap.get(name) else {
                err = Some(Error::TensorNotFound(format!("gradient for `{name}`")));
                return;
            };
            if g.shape() != p.shape() {
                err = Some(Error::Dimension(format!("gradient for `{name}` has shape {:?}, parameter {:?}", g.shape(), p.shape())));
                return;
            }
            let (m, v) = moments
                .entry(name.to_string())
                .or_insert_with(|| (ArrayD::zeros(p.raw_dim()), ArrayD::zeros(p.raw_dim())));
            Zip::from(&mut p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let mh = *m / bc1;
                let vh = *v / bc2;
                *p = *p * decay - lr_f * mh / (vh.sqrt() + eps);
            });
        });
        match err {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    /// Moments and step count as tensors `optim.m.*`, `optim.v.*` and metadata.
    pub fn to_container(&self) -> Result<TensorContainer> {
        let mut c = TensorContainer::new();
        for (name, (m, v)) in &self.moments {
            c.insert(format!("optim.m.{name}"), m.shape(), m.as_slice().unwrap())?;
            c.insert(format!("optim.v.{name}"), v.shape(), v.as_slice().unwrap())?;
        }
        c.set_metadata("optim.step", self.step.to_string());
        Ok(c)
    }

    pub fn load_state(&mut self, c: &TensorContainer) -> Result<()> {
        let step = c
            .metadata()
            .get("optim.step")
            .ok_or_else(|| Error::TensorNotFound("optim.step".into()))?;
        self.step = step
            .parse()
            .map_err(|_| Error::format("optim.step", "not an integer"))?;
        self.moments.clear();
        for name in c.names().filter_map(|n| n.strip_prefix("optim.m.")) {
            let m = c.get::<F>(&format!("optim.m.{name}"))?;
            let v = c.get::<F>(&format!("optim.v.{name}"))?;
            self.moments.insert(name.to_string(), (m, v));
        }
        Ok(())
    }
}
