//! Trainable-parameter accounting for every adapter method on the ViT-L/16
//! compatible backbone, next to the reference counts.
//!
//! Run: `cargo run --example param_counts`

use cartoseg::adapters::{accounting_row, AdapterConfig, AdapterMethod, Target};
use cartoseg::encoder::{EncoderConfig, Preset};

fn main() {
    let enc = EncoderConfig::preset(Preset::VitlCompat);
    println!("{:<6} {:<14} {:>10} {:>10} {:>10} {:>8}", "method", "targets", "adapters", "+head", "reference", "flag");
    let methods = [
        AdapterMethod::None,
        AdapterMethod::Lora,
        AdapterMethod::Lokr,
        AdapterMethod::Loha,
        AdapterMethod::Dora,
    ];
    for targets in [vec![Target::Q, Target::K, Target::V], vec![Target::Qkv, Target::O]] {
        for method in methods {
            let cfg = AdapterConfig {
                targets: targets.clone(),
                ..AdapterConfig::few_shot(method)
            };
            let row = accounting_row(&cfg, &enc);
            let names: Vec<_> = targets.iter().map(|t| t.name()).collect();
            println!(
                "{:<6} {:<14} {:>10} {:>10} {:>10} {:>8}",
                method.to_string(),
                names.join(","),
                row.adapters_only,
                row.with_head,
                row.reference,
                if row.unexplained { "delta" } else { "ok" }
            );
        }
    }
}
