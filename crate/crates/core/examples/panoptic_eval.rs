//! Pixel and panoptic metrics for a predicted mask against a reference.
//!
//! Run: `cargo run --example panoptic_eval`

use cartoseg::data::sample::Mask;
use cartoseg::metrics::{confusion, connected_components, panoptic_quality, Connectivity};

fn blocks(spec: &[(usize, usize, usize, usize)]) -> Mask {
    let mut m = Mask::from_elem((12, 12), false);
    for &(y, x, h, w) in spec {
        m.slice_mut(ndarray::s![y..y + h, x..x + w]).fill(true);
    }
    m
}

fn main() -> cartoseg::Result<()> {
    let reference = blocks(&[(1, 1, 4, 4), (1, 7, 3, 4), (8, 2, 3, 8)]);
    // First block is close, second is shifted too far, a third appears from nowhere.
    let pred = blocks(&[(1, 1, 4, 3), (2, 9, 3, 3), (8, 2, 3, 4), (8, 7, 3, 3)]);

    let c = confusion(&pred, &reference, None)?;
    println!("pixels: tp {} fp {} fn {} tn {}, F1 {:.3}, IoU {:.3}", c.tp, c.fp, c.fn_, c.tn, c.f1(), c.iou());

    for conn in [Connectivity::Four, Connectivity::Eight] {
        let p = connected_components(&pred, conn);
        let r = connected_components(&reference, conn);
        let report = panoptic_quality(&p, &r)?;
        println!(
            "{conn:?}-connected: {} predicted / {} reference segments, PQ {:.3} = SQ {:.3} x RQ {:.3}",
            p.count, r.count, report.pq, report.sq, report.rq
        );
        for m in &report.matches {
            println!("  pred {} <-> ref {} IoU {:.3}", m.pred, m.reference, m.iou);
        }
    }
    Ok(())
}
