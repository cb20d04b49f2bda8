//! Frozen encoder + probe against LoRA-adapted encoder + probe on synthetic
//! railway-like lines, after a short proxy pretraining of a toy encoder.
//!
//! Run: `cargo run --release --example frozen_vs_lora -- [seeds]`

use std::time::Instant;

use cartoseg::adapters::{AdapterConfig, AdapterMethod};
use cartoseg::data::synth::{synth_generate, SynthClass};
use cartoseg::encoder::{EncoderConfig, Preset, VitWeights};
use cartoseg::model::SegModel;
use cartoseg::run::{evaluate_samples, train_model, EvalOptions, PredictOptions, RunConfig};

fn env<T: std::str::FromStr>(k: &str, d: T) -> T {
    std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d)
}

fn main() -> cartoseg::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let scale: f64 = env("SCALE", 0.5);
    let epochs: usize = env("EPOCHS", 30);
    let pre_steps: usize = env("PRE_STEPS", 100);
    let preset = match env("PRESET", "small".to_string()).as_str() {
        "tiny" => Preset::Tiny,
        _ => Preset::Small,
    };
    let t0 = Instant::now();
    let data = synth_generate(0, 64, SynthClass::LinearFeatures)?;
    let (train, rest) = data.split_at(40);
    let (val, test) = rest.split_at(8);

    let enc_cfg = EncoderConfig::preset(preset);
    let base = RunConfig {
        input_scale: scale,
        batch_size: 4,
        ..RunConfig::default()
    };

    // Proxy pretraining: full encoder on the areal class.
    let proxy = synth_generate(1000, 40, SynthClass::ArealFeatures)?;
    let pre_epochs = pre_steps.div_ceil(proxy.len().div_ceil(base.batch_size));
    let pre = train_model(&base, SegModel::full(VitWeights::init(&enc_cfg, 0)?)?, &proxy, &[], pre_epochs)?;
    let encoder = pre.last.encoder.clone();
    eprintln!("pretrain {pre_epochs} epochs, loss {:.4} -> {:.4} ({:.0?})", pre.log[0].train_loss, pre.log.last().unwrap().train_loss, t0.elapsed());

    let eval = EvalOptions {
        predict: PredictOptions {
            input_scale: scale,
            ..PredictOptions::default()
        },
        ..EvalOptions::default()
    };
    let mut gaps = Vec::new();
    for seed in 0..seeds {
        let cfg = RunConfig { seed, ..base.clone() };
        let mut ious = Vec::new();
        for method in [AdapterMethod::None, AdapterMethod::Lora] {
            let t = Instant::now();
            let model = SegModel::new(encoder.clone(), &AdapterConfig::few_shot(method), seed)?;
            let out = train_model(&cfg, model, train, val, epochs)?;
            let r = evaluate_samples(&out.best, test, &eval)?;
            eprintln!(
                "seed {seed} {method}: loss {:.4} -> {:.4}, best epoch {} val {:.3}, test IoU {:.3} ({:.0?})",
                out.log[0].train_loss,
                out.log.last().unwrap().train_loss,
                out.best_epoch,
                out.best_val_iou.unwrap_or(0.0),
                r.iou,
                t.elapsed()
            );
            if std::env::var("VERBOSE").is_ok() {
                for l in &out.log {
                    eprintln!("  {} {:.4} {:.3} {:.1e}", l.epoch, l.train_loss, l.val_iou.unwrap_or(0.0), l.lr);
                }
            }
            ious.push(r.iou);
        }
        gaps.push(ious[1] - ious[0]);
    }
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    println!("mean IoU gain of LoRA over frozen: {:.1} points ({:.0?} total)", 100.0 * mean, t0.elapsed());
    Ok(())
}
