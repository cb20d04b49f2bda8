//! Focal, dice and combined loss on small fixtures, and the one-cycle
//! learning-rate curve.
//!
//! Run: `cargo run --example loss_and_schedule`

use cartoseg::objective::{dice_loss, focal_loss, onecycle_lr, total_loss, LossConfig, OptimizerConfig};
use ndarray::array;

fn main() -> cartoseg::Result<()> {
    let cfg = LossConfig::default();
    let p = array![[0.9f64, 0.6, 0.2], [0.1, 0.7, 0.4]];
    let t = array![[true, true, false], [false, true, true]];
    println!("focal {:.5}", focal_loss(p.view(), &t, None, cfg.focal_gamma, cfg.focal_balance)?);
    println!("dice  {:.5}", dice_loss(p.view(), &t, None, cfg.dice_eps)?);
    println!("total {:.5} (alpha {}, beta {})", total_loss(p.view(), &t, None, &cfg)?, cfg.alpha, cfg.beta);

    let opt = OptimizerConfig {
        total_steps: 100,
        ..OptimizerConfig::default()
    };
    println!("\nstep  lr");
    for step in (0..=100).step_by(10) {
        let lr = onecycle_lr(step, &opt)?;
        let bar = "#".repeat((lr / opt.lr_max * 40.0).round() as usize);
        println!("{step:>4}  {lr:.2e} {bar}");
    }
    Ok(())
}
