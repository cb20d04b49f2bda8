//! Project encoder features onto their first three principal components and
//! write them as an RGB image.
//!
//! Run: `cargo run --example pca_viz -- [output.png]`

use cartoseg::data::raster::write_rgb;
use cartoseg::data::synth::{synth_generate, SynthClass};
use cartoseg::encoder::{encode, EncoderConfig, VitWeights};
use cartoseg::featviz::{fit_grid, project_to_rgb, upsample_nearest};
use cartoseg::model::prepare_input;

fn main() -> cartoseg::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("cartoseg-pca.png"));
    let cfg = EncoderConfig::tiny();
    let weights = VitWeights::<f32>::init(&cfg, 0)?;
    let sample = &synth_generate(3, 1, SynthClass::ArealFeatures)?[0];
    let grid = encode(&prepare_input(&sample.image, 0.5, cfg.patch_size), &weights, None)?;

    let basis = fit_grid(&grid)?;
    let total: f64 = basis.explained_variance.iter().sum();
    for (i, v) in basis.explained_variance.iter().enumerate() {
        println!("component {i}: variance {v:.4} ({:.1}% of the top three)", 100.0 * v / total);
    }
    let rgb = project_to_rgb(&grid, &basis)?;
    let full = upsample_nearest(&rgb, sample.height(), sample.width());
    write_rgb(&out, &full)?;
    println!("wrote {}", out.display());
    Ok(())
}
