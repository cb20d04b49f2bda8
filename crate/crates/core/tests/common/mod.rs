//! Helpers shared by the integration test targets: a finite-difference
//! gradient checker and brute-force metric oracles.
#![allow(dead_code)]

use std::collections::VecDeque;

use cartoseg::adapters::{AdapterConfig, AdapterMethod, Target};
use cartoseg::data::sample::Mask;
use cartoseg::encoder::{EncoderConfig, VitWeights};
use cartoseg::model::SegModel;
use cartoseg::objective::LossConfig;
use cartoseg::params::Params;
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;

pub fn nudge(model: &mut SegModel<f64>, index: usize, delta: f64) {
    let mut offset = 0;
    model.visit_mut(&mut |_, mut t| {
        let n = t.len();
        if (offset..offset + n).contains(&index) {
            let slot = t.iter_mut().nth(index - offset).unwrap();
            *slot += delta;
        }
        offset += n;
    });
}

pub fn randomize(model: &mut SegModel<f64>, rng: &mut ChaCha8Rng, scale: f64) {
    model.visit_mut(&mut |_, mut t| t.mapv_inplace(|v| v + scale * (rng.random::<f64>() * 2.0 - 1.0)));
}

pub struct Case {
    pub image: Array3<f64>,
    pub target: Mask,
    pub ignore: Mask,
}

pub fn case(seed: u64, side: usize) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Case {
        image: Array3::from_shape_simple_fn((side, side, 3), || rng.random::<f64>()),
        target: Mask::from_shape_simple_fn((side / 2, side / 2), || rng.random::<f64>() < 0.3),
        ignore: Mask::from_shape_simple_fn((side / 2, side / 2), || rng.random::<f64>() < 0.1),
    }
}

/// Largest relative error over `probes` parameters, spread over every tensor.
pub fn check(mut model: SegModel<f64>, c: &Case, probes: usize, dropout_seed: Option<u64>) -> (f64, usize) {
    let loss_cfg = LossConfig::default();
    let eval = |m: &SegModel<f64>, grads: bool| {
        let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
        let (l, g) = m
            .loss_and_grads(&c.image, &c.target, Some(&c.ignore), &loss_cfg, rng.as_mut())
            .unwrap();
        (l, grads.then_some(g))
    };
    let (_, g) = eval(&model, true);
    let analytic = g.unwrap().flatten();
    let total = analytic.len();
    assert_eq!(total, model.num_params());

    // Each tensor gets probes in proportion to its size, at least one.
    let mut sizes = Vec::new();
    model.visit(&mut |_, t| sizes.push(t.len()));
    let mut picks = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut offset = 0;
    for n in sizes {
        let k = ((probes * n).div_ceil(total)).clamp(1, n);
        for _ in 0..k {
            picks.push(offset + rng.random_range(0..n));
        }
        offset += n;
    }

    let mut worst: f64 = 0.0;
    for &i in &picks {
        nudge(&mut model, i, H);
        let (lp, _) = eval(&model, false);
        nudge(&mut model, i, -2.0 * H);
        let (lm, _) = eval(&model, false);
        nudge(&mut model, i, H);
        let numeric = (lp - lm) / (2.0 * H);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        if err > 1e-4 {
            eprintln!("param {i}: analytic {a:e} numeric {numeric:e}");
        }
        worst = worst.max(err);
    }
    eprintln!("{} probes, max relative error {worst:.2e}", picks.len());
    (worst, picks.len())
}

pub fn adapted(method: AdapterMethod, dropout: f64, targets: Vec<Target>, seed: u64) -> SegModel<f64> {
    let enc = VitWeights::<f64>::init(&EncoderConfig::tiny(), seed).unwrap();
    let cfg = AdapterConfig {
        dropout,
        targets,
        ..AdapterConfig::few_shot(method)
    };
    let mut m = SegModel::new(enc, &cfg, seed + 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
    randomize(&mut m, &mut rng, 0.3);
    m
}

/// Segments as pixel lists, found by breadth-first flood fill.
pub fn bfs_segments(mask: &Mask, eight: bool) -> Vec<Vec<(usize, usize)>> {
    let (h, w) = mask.dim();
    let mut seen = Array2::from_elem((h, w), false);
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask[[y, x]] || seen[[y, x]] {
                continue;
            }
            let mut seg = Vec::new();
            let mut queue = VecDeque::from([(y, x)]);
            seen[[y, x]] = true;
            while let Some((cy, cx)) = queue.pop_front() {
                seg.push((cy, cx));
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if (dy == 0 && dx == 0) || (!eight && dy != 0 && dx != 0) {
                            continue;
                        }
                        let (ny, nx) = (cy as i64 + dy, cx as i64 + dx);
                        if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                            continue;
                        }
                        let (ny, nx) = (ny as usize, nx as usize);
                        if mask[[ny, nx]] && !seen[[ny, nx]] {
                            seen[[ny, nx]] = true;
                            queue.push_back((ny, nx));
                        }
                    }
                }
            }
            seg.sort();
            out.push(seg);
        }
    }
    out
}

pub struct BruteMatch {
    /// First pixel (raster order) of the predicted and reference segment.
    pub pred_anchor: (usize, usize),
    pub ref_anchor: (usize, usize),
    pub iou: f64,
}

pub struct BrutePanoptic {
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub matches: Vec<BruteMatch>,
}

/// Every segment pair is compared pixel by pixel; pairs with IoU > 0.5 match.
pub fn brute_panoptic(pred: &Mask, reference: &Mask, eight: bool) -> BrutePanoptic {
    let ps = bfs_segments(pred, eight);
    let rs = bfs_segments(reference, eight);
    let mut matches = Vec::new();
    for p in &ps {
        for r in &rs {
            let inter = p.iter().filter(|px| r.binary_search(px).is_ok()).count();
            let union = p.len() + r.len() - inter;
            let iou = inter as f64 / union as f64;
            if iou > 0.5 {
                matches.push(BruteMatch {
                    pred_anchor: p[0],
                    ref_anchor: r[0],
                    iou,
                });
            }
        }
    }
    let tp = matches.len() as f64;
    let fp = ps.len() as f64 - tp;
    let fn_ = rs.len() as f64 - tp;
    let (sq, rq) = if ps.is_empty() && rs.is_empty() {
        (1.0, 1.0)
    } else if matches.is_empty() {
        (0.0, 0.0)
    } else {
        (
            matches.iter().map(|m| m.iou).sum::<f64>() / tp,
            tp / (tp + 0.5 * fp + 0.5 * fn_),
        )
    };
    BrutePanoptic {
        pq: sq * rq,
        sq,
        rq,
        matches,
    }
}

pub fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, density: f64) -> Mask {
    Mask::from_shape_simple_fn((h, w), || rng.random::<f64>() < density)
}
