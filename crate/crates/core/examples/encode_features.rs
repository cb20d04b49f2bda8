//! Encode an image into a patch-feature grid with a randomly initialised
//! toy encoder, and save the weights to a tensor container.
//!
//! Run: `cargo run --example encode_features`

use cartoseg::data::synth::{synth_generate, SynthClass};
use cartoseg::encoder::{encode, patchify, EncoderConfig, VitWeights};
use cartoseg::model::prepare_input;
use cartoseg::params::Params;

fn main() -> cartoseg::Result<()> {
    let cfg = EncoderConfig::tiny();
    let weights = VitWeights::<f32>::init(&cfg, 0)?;
    println!(
        "encoder: patch {}, dim {}, depth {}, heads {}, {} parameters",
        cfg.patch_size,
        cfg.embed_dim,
        cfg.depth,
        cfg.num_heads,
        weights.num_params()
    );

    let sample = &synth_generate(0, 1, SynthClass::LinearFeatures)?[0];
    // Half resolution: 224 px becomes 112 px, a 28 x 28 patch grid.
    let input = prepare_input::<f32>(&sample.image, 0.5, cfg.patch_size);
    let patches = patchify(input.view(), cfg.patch_size)?;
    println!("input {:?} -> {} patches of {} values", input.dim(), patches.nrows(), patches.ncols());

    let grid = encode(&input, &weights, None)?;
    let (gh, gw, d) = grid.dim();
    println!("feature grid {gh} x {gw} x {d}");
    let norms: Vec<f32> = grid.as_rows().rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let mean = norms.iter().sum::<f32>() / norms.len() as f32;
    println!("mean feature norm {mean:.3}");

    let path = std::env::temp_dir().join("cartoseg-tiny-encoder.safetensors");
    weights.to_container()?.save(&path)?;
    let back = VitWeights::<f32>::from_container(&cfg, &cartoseg::data::TensorContainer::load(&path)?)?;
    assert_eq!(back, weights);
    println!("weights round-tripped through {}", path.display());
    Ok(())
}
