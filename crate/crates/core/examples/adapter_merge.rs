//! Attach each adapter method to a toy encoder, perturb the factors as if
//! trained, and fold them back into plain weights.
//!
//! Run: `cargo run --example adapter_merge`

use cartoseg::adapters::{AdaptedEncoder, AdapterConfig, AdapterMethod};
use cartoseg::encoder::{encode, EncoderConfig, VitWeights};
use cartoseg::params::Params;
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> cartoseg::Result<()> {
    let base = VitWeights::<f64>::init(&EncoderConfig::tiny(), 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let image = Array3::from_shape_simple_fn((32, 32, 3), || rng.random::<f64>());
    let plain = encode(&image, &base, None)?;

    for method in [AdapterMethod::Lora, AdapterMethod::Dora, AdapterMethod::Loha, AdapterMethod::Lokr] {
        let mut enc = AdaptedEncoder::attach(&AdapterConfig::few_shot(method), base.clone(), 3)?;
        let fresh_same = enc.encode(&image)? == plain;
        enc.adapters
            .visit_mut(&mut |_, mut t| t.mapv_inplace(|v| v + 0.1 * (rng.random::<f64>() - 0.5)));
        let adapted = enc.encode(&image)?;
        let merged = encode(&image, &enc.merge()?, None)?;
        let gap = (&adapted.grid - &merged.grid).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let moved = (&adapted.grid - &plain.grid).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        println!(
            "{method:<5} {:>6} trainable, fresh output unchanged: {fresh_same}, \
             change after perturbing {moved:.3}, merged vs adapted {gap:.1e}",
            enc.trainable_count()
        );
    }
    Ok(())
}
