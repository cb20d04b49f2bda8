use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cartoseg::data::container::TensorContainer;
use cartoseg::data::manifest::{DatasetManifest, Role};
use cartoseg::data::raster::{read_mask, read_rgb, write_mask, write_rgb};
use cartoseg::data::synth::SynthClass;
use cartoseg::model::SegModel;
use cartoseg::run::evaluate::evaluate_checkpoints;
use cartoseg::run::{self, EvalOptions, RunConfig};

#[derive(Parser)]
#[command(name = "cartoseg", version, about = "Few-shot segmentation of map imagery")]
struct Cli {
    /// Worker threads (computation is currently sequential; must be >= 1).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one or more runs from a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Evaluate checkpoints on a manifest split.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to the best checkpoint of each run in the config's output directory.
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        panoptic: bool,
        #[arg(long)]
        runs: Option<usize>,
        /// Report directory; defaults to the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict a binary mask for a scan of any size.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Pixels set in this mask are excluded from the prediction.
        #[arg(long)]
        ignore: Option<PathBuf>,
        /// Tiling and input-scale settings.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Render the first three principal components of the features as RGB.
    Viz {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Use this checkpoint's encoder and adapters.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Use the config's encoder without adapters.
        #[arg(long, required_unless_present = "checkpoint")]
        config: Option<PathBuf>,
        #[arg(long)]
        input_scale: Option<f64>,
    },
    /// Write a synthetic dataset and its manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 40)]
        count: usize,
        #[arg(long, default_value = "linear-features")]
        class: SynthClass,
        #[arg(long)]
        force: bool,
    },
}

fn parse_role(s: &str) -> anyhow::Result<Role> {
    Ok(serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| anyhow::anyhow!("unknown split `{s}` (train, val or test)"))?)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run_cli(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run_cli(cli: Cli) -> anyhow::Result<()> {
    let threads = if cartoseg::test_mode() { 1 } else { cli.threads.unwrap_or(1) };
    anyhow::ensure!(threads >= 1, "--threads must be at least 1");
    match cli.command {
        Command::Train { config, seed, runs } => {
            let mut cfg = RunConfig::load(&config)?;
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.runs = runs.or(cfg.runs);
            cfg.threads = threads;
            let outcomes = run::run_training(&cfg)?;
            for (i, o) in outcomes.iter().enumerate() {
                println!(
                    "run {i}: best epoch {} val IoU {} final loss {:.5}",
                    o.best_epoch,
                    o.best_val_iou.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into()),
                    o.log.last().map(|l| l.train_loss).unwrap_or(f64::NAN)
                );
            }
        }
        Command::Evaluate {
            config,
            checkpoint,
            split,
            panoptic,
            runs,
            out,
        } => {
            let cfg = RunConfig::load(&config)?;
            let checkpoints = if checkpoint.is_empty() {
                let n = runs.unwrap_or_else(|| cfg.default_runs());
                (0..n).map(|i| cfg.run_dir(i).join("best.safetensors")).collect()
            } else {
                checkpoint
            };
            let manifest = DatasetManifest::load(&cfg.manifest)?;
            let samples = manifest.load_split(parse_role(&split)?)?;
            let opts = EvalOptions {
                predict: cfg.predict_options(),
                panoptic,
                connectivity: cfg.connectivity,
                min_area: cfg.min_area,
                iou_mode: cfg.iou_mode,
            };
            let out = out.unwrap_or(cfg.output_dir.clone());
            let (reports, summary) = evaluate_checkpoints(&checkpoints, &samples, &opts, &out)?;
            for (i, r) in reports.iter().enumerate() {
                let pq = r.panoptic.map(|p| format!(" PQ {:.4}", p.pq)).unwrap_or_default();
                println!("run {i}: F1 {:.4} IoU {:.4}{pq}", r.f1, r.iou);
            }
            if reports.len() > 1 {
                println!(
                    "mean±std: F1 {:.4}±{:.4} IoU {:.4}±{:.4}",
                    summary.f1.mean, summary.f1.std, summary.iou.mean, summary.iou.std
                );
            }
        }
        Command::Predict {
            checkpoint,
            input,
            output,
            ignore,
            config,
        } => {
            let model = SegModel::from_checkpoint(&TensorContainer::load(&checkpoint)?)?;
            let opts = match config {
                Some(c) => RunConfig::load(c)?.predict_options(),
                None => run::PredictOptions::default(),
            };
            let image = read_rgb(&input)?;
            let ignore = ignore.map(read_mask).transpose()?;
            let mask = run::predict_scan(&model, &image, ignore.as_ref(), &opts)?;
            write_mask(&output, &mask)?;
        }
        Command::Viz {
            input,
            output,
            checkpoint,
            config,
            input_scale,
        } => {
            let image = read_rgb(&input)?;
            let cfg = config.map(RunConfig::load).transpose()?;
            let scale = input_scale.or(cfg.as_ref().map(|c| c.input_scale)).unwrap_or(3.0);
            let rgb = match (checkpoint, cfg) {
                (Some(ck), _) => {
                    let model = SegModel::from_checkpoint(&TensorContainer::load(&ck)?)?;
                    run::viz::feature_rgb(&model, &image, scale)?
                }
                (None, Some(cfg)) => run::viz::encoder_rgb(&cfg.encoder.load()?, &image, scale)?,
                (None, None) => unreachable!("clap requires one of --checkpoint or --config"),
            };
            write_rgb(&output, &rgb)?;
        }
        Command::Synth {
            out,
            seed,
            count,
            class,
            force,
        } => {
            let m = run::synth::write_dataset(&out, seed, count, class, force)?;
            println!("wrote {} samples to {}", m.samples.len(), out.display());
        }
    }
    Ok(())
}
