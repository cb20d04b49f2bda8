//! Cut a scan that is not a multiple of the tile size into tiles and stitch
//! them back.
//!
//! Run: `cargo run --example tile_stitch`

use cartoseg::data::synth::{synth_scan, SynthClass};
use cartoseg::data::tiling::{stitch_masks, tile_image};

fn main() -> cartoseg::Result<()> {
    let scan = synth_scan(4, 1000, 700, SynthClass::LinearFeatures);
    let (tiles, layout) = tile_image(&scan, 448, 448)?;
    println!("scan {}x{} -> {} tiles of {}", scan.height(), scan.width(), tiles.len(), layout.tile);
    for (t, span) in tiles.iter().zip(&layout.spans) {
        println!(
            "  origin {:?}: {}x{} valid, foreground {:.1}%",
            t.origin,
            span.valid_h,
            span.valid_w,
            100.0 * t.foreground_fraction()
        );
    }
    let masks: Vec<_> = tiles.iter().map(|t| t.mask.clone()).collect();
    let back = stitch_masks(&masks, &layout)?;
    println!("stitched mask identical to the original: {}", back == scan.mask);
    Ok(())
}
