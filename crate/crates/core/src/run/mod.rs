//! Run orchestration behind the command-line tool: configs, training,
//! evaluation, tiled prediction, feature visualisation and synthetic data.

pub mod config;
pub mod evaluate;
pub mod predict;
pub mod synth;
pub mod train;
pub mod viz;

pub use config::{EncoderSource, RunConfig, WeightFormat};
pub use evaluate::{evaluate_checkpoints, evaluate_samples, summarize_runs, EvalOptions, EvalReport, ImageRow, RunsSummary};
pub use predict::{predict_probabilities, predict_scan, predict_scan_probabilities, PredictOptions};
pub use train::{run_training, train_model, validation_iou, EpochLog, TrainOutcome};
