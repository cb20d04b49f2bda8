//! JSON run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adapters::{AdapterConfig, AdapterMethod};
use crate::data::container::TensorContainer;
use crate::data::manifest::FewShotSpec;
use crate::encoder::{EncoderConfig, Preset, VitWeights};
use crate::error::{Error, Result};
use crate::head::HeadOrder;
use crate::metrics::{Connectivity, IouMode};
use crate::objective::{LossConfig, OptimizerConfig};
use crate::run::predict::PredictOptions;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightFormat {
    /// Tensor names as written by this crate.
    #[default]
    Native,
    /// timm Vision Transformer state dict (fused qkv, conv patch embedding).
    Timm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderSource {
    pub preset: Preset,
    /// Pretrained weights; without them the encoder is randomly initialised.
    pub weights: Option<PathBuf>,
    pub format: WeightFormat,
    pub init_seed: u64,
}

impl Default for EncoderSource {
    fn default() -> Self {
        EncoderSource {
            preset: Preset::VitlCompat,
            weights: None,
            format: WeightFormat::Native,
            init_seed: 0,
        }
    }
}

impl EncoderSource {
    pub fn config(&self) -> EncoderConfig {
        EncoderConfig::preset(self.preset)
    }

    pub fn load(&self) -> Result<VitWeights<f32>> {
        let cfg = self.config();
        match &self.weights {
            None => {
                log::warn!("no encoder weights given, using a random {:?} encoder", self.preset);
                VitWeights::init(&cfg, self.init_seed)
            }
            Some(path) => {
                let c = TensorContainer::load(path)?;
                match self.format {
                    WeightFormat::Native => VitWeights::from_container(&cfg, &c.subset_or_all("encoder.")),
                    WeightFormat::Timm => VitWeights::import_timm(&cfg, &c),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub encoder: EncoderSource,
    pub adapter: AdapterConfig,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    pub head_order: HeadOrder,
    /// Encoder input is the sample rescaled by this factor.
    pub input_scale: f64,
    /// `None` picks 300 for few-shot subsets and 30 otherwise.
    pub epochs: Option<usize>,
    pub batch_size: usize,
    pub seed: u64,
    /// `None` trains on the whole training split.
    pub few_shot: Option<FewShotSpec>,
    /// Random D4 symmetry per sample and epoch.
    pub augment: bool,
    pub manifest: PathBuf,
    pub output_dir: PathBuf,
    /// Independent repetitions; `None` means 10 for k <= 5 and 1 otherwise.
    pub runs: Option<usize>,
    pub threads: usize,
    pub threshold: f64,
    pub connectivity: Connectivity,
    pub min_area: usize,
    pub iou_mode: IouMode,
    pub tile_size: usize,
    /// Tiles are resized to this side before encoding; `None` keeps them.
    pub tile_resize: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            encoder: EncoderSource::default(),
            adapter: AdapterConfig::few_shot(AdapterMethod::Lora),
            loss: LossConfig::default(),
            optimizer: OptimizerConfig::default(),
            head_order: HeadOrder::default(),
            input_scale: 3.0,
            epochs: None,
            batch_size: 4,
            seed: 0,
            few_shot: None,
            augment: true,
            manifest: PathBuf::from("manifest.json"),
            output_dir: PathBuf::from("runs/out"),
            runs: None,
            threads: 1,
            threshold: 0.5,
            connectivity: Connectivity::Eight,
            min_area: 0,
            iou_mode: IouMode::Foreground,
            tile_size: 448,
            tile_resize: Some(224),
        }
    }
}

/// Few-shot subsets up to this fraction of the training split get the long schedule.
pub const FEW_SHOT_FRACTION: f64 = 0.1;

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.optimizer.validate()?;
        self.adapter.validate(&self.encoder.config())?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.input_scale <= 0.0 || !self.input_scale.is_finite() {
            return Err(Error::Config("input_scale must be positive".into()));
        }
        if self.epochs == Some(0) || self.runs == Some(0) || self.threads == 0 || self.tile_size == 0 {
            return Err(Error::Config("epochs, runs, threads and tile_size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config("threshold must be in [0, 1]".into()));
        }
        Ok(())
    }

    /// Epoch count for a run on `n_train` of `n_split` training samples.
    pub fn epochs_for(&self, n_train: usize, n_split: usize) -> usize {
        self.epochs.unwrap_or(if (n_train as f64) <= FEW_SHOT_FRACTION * n_split as f64 {
            300
        } else {
            30
        })
    }

    pub fn default_runs(&self) -> usize {
        self.runs
            .unwrap_or(if self.few_shot.as_ref().is_some_and(|f| f.k <= 5) { 10 } else { 1 })
    }

    pub fn predict_options(&self) -> PredictOptions {
        PredictOptions {
            tile_size: self.tile_size,
            tile_resize: self.tile_resize,
            input_scale: self.input_scale,
            threshold: None,
        }
    }

    /// Output directory of repetition `run`.
    pub fn run_dir(&self, run: usize) -> PathBuf {
        self.output_dir.join(format!("run-{run}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        let mut c = RunConfig::default();
        c.few_shot = Some(FewShotSpec { k: 5, seed: 3, ids: None });
        c.epochs = Some(7);
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!((c.input_scale, c.batch_size), (3.0, 4));
        assert_eq!(c.epochs_for(10, 100), 300);
        assert_eq!(c.epochs_for(100, 100), 30);
        assert_eq!(c.default_runs(), 1);
        let few = RunConfig {
            few_shot: Some(FewShotSpec { k: 5, seed: 0, ids: None }),
            ..RunConfig::default()
        };
        assert_eq!(few.default_runs(), 10);
    }

    #[test]
    fn partial_json_uses_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"seed": 9, "encoder": {"preset": "tiny"}}"#).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.encoder.preset, Preset::Tiny);
        assert_eq!(c.batch_size, 4);
    }
}
