//! Property tests over randomly generated inputs.

mod common;

use cartoseg::adapters::{count_trainable, AdapterConfig, AdapterMethod, AdapterSet, Factors, Target};
use cartoseg::augment::{apply_hwc, apply_plane, compose, inverse, D4Element};
use cartoseg::data::container::TensorContainer;
use cartoseg::data::manifest::{few_shot_select, DatasetManifest, FewShotSpec, Role, SampleRecord};
use cartoseg::data::resize::{resize_hwc, resize_plane};
use cartoseg::data::sample::{Mask, SegmentationSample};
use cartoseg::data::tiling::{stitch, stitch_average, tile_image, TileLayout};
use cartoseg::encoder::{encode, patchify, EncoderConfig, VitWeights};
use cartoseg::featviz::pca_fit;
use cartoseg::head::{dense_logits, probabilities, HeadOrder, ProbeHead};
use cartoseg::metrics::{confusion, connected_components, panoptic_from_masks, Connectivity};
use cartoseg::model::SegModel;
use cartoseg::objective::{dice_loss, focal_loss, onecycle_lr, total_loss, AdamW, LossConfig, OptimizerConfig};
use cartoseg::params::Params;
use nalgebra::DMatrix;
use ndarray::{Array1, Array2, Array3, Axis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn image(r: &mut ChaCha8Rng, h: usize, w: usize) -> Array3<f64> {
    Array3::from_shape_simple_fn((h, w, 3), || r.random::<f64>())
}

fn max_abs_diff<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>, b: &ndarray::Array<f64, D>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn method_strategy() -> impl Strategy<Value = AdapterMethod> {
    prop_oneof![
        Just(AdapterMethod::Lora),
        Just(AdapterMethod::Dora),
        Just(AdapterMethod::Loha),
        Just(AdapterMethod::Lokr),
    ]
}

fn targets_strategy() -> impl Strategy<Value = Vec<Target>> {
    prop_oneof![
        Just(vec![Target::Q, Target::K, Target::V]),
        Just(vec![Target::Qkv, Target::O]),
        Just(vec![Target::V]),
        Just(vec![Target::Q, Target::V, Target::O]),
    ]
}

fn element() -> impl Strategy<Value = D4Element> {
    (0..8usize).prop_map(|i| D4Element::ALL[i])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn encoder_grid_shape(gh in 1..6usize, gw in 1..6usize, seed in any::<u64>()) {
        let w = VitWeights::<f64>::init(&EncoderConfig::tiny(), seed % 7).unwrap();
        let mut r = rng(seed);
        let p = w.config.patch_size;
        let img = image(&mut r, gh * p, gw * p);
        let out = encode(&img, &w, None).unwrap();
        prop_assert_eq!(out.dim(), (gh, gw, w.config.embed_dim));
        prop_assert!(out.grid.iter().all(|v| v.is_finite()));
        prop_assert_eq!(encode(&img, &w, None).unwrap(), out);
        prop_assert!(encode(&image(&mut r, gh * p + 1, gw * p), &w, None).is_err());
    }

    #[test]
    fn patchify_block_law(gh in 1..5usize, gw in 1..5usize, p in 1..5usize, seed in any::<u64>()) {
        let img = image(&mut rng(seed), gh * p, gw * p);
        let rows = patchify(img.view(), p).unwrap();
        prop_assert_eq!(rows.dim(), (gh * gw, p * p * 3));
        for bi in 0..gh {
            for bj in 0..gw {
                for py in 0..p {
                    for px in 0..p {
                        for c in 0..3 {
                            prop_assert_eq!(rows[[bi * gw + bj, (py * p + px) * 3 + c]], img[[bi * p + py, bj * p + px, c]]);
                        }
                    }
                }
            }
        }
    }

    /// Without positional embeddings self-attention cannot tell patches
    /// apart, so permuting the patches permutes the output grid.
    #[test]
    fn encoder_equivariant_without_positions(seed in any::<u64>()) {
        let mut w = VitWeights::<f64>::init(&EncoderConfig::tiny(), seed % 5).unwrap();
        w.pos_embed.fill(0.0);
        let p = w.config.patch_size;
        let (gh, gw) = (3, 2);
        let mut r = rng(seed);
        let img = image(&mut r, gh * p, gw * p);
        let mut perm: Vec<usize> = (0..gh * gw).collect();
        for i in (1..perm.len()).rev() {
            perm.swap(i, r.random_range(0..=i));
        }
        let shuffled = Array3::from_shape_fn((gh * p, gw * p, 3), |(y, x, c)| {
            let src = perm[(y / p) * gw + x / p];
            img[[(src / gw) * p + y % p, (src % gw) * p + x % p, c]]
        });
        let a = encode(&img, &w, None).unwrap().as_rows();
        let b = encode(&shuffled, &w, None).unwrap().as_rows();
        for (i, &src) in perm.iter().enumerate() {
            prop_assert!(max_abs_diff(&b.row(i).to_owned(), &a.row(src).to_owned()) < 1e-10);
        }
    }

    #[test]
    fn trainable_count_matches_enumeration(
        method in method_strategy(),
        targets in targets_strategy(),
        rank in 1..6usize,
        depth in 1..4usize,
        heads in 1..3usize,
    ) {
        let mut enc = EncoderConfig::tiny();
        enc.depth = depth;
        enc.num_heads = heads;
        enc.embed_dim = 8 * heads * 2;
        let cfg = AdapterConfig { rank, targets, ..AdapterConfig::few_shot(method) };
        let model = SegModel::<f32>::new(VitWeights::init(&enc, 0).unwrap(), &cfg, 1).unwrap();
        prop_assert_eq!(count_trainable(&cfg, &enc, true), model.num_params());
        let mut names = Vec::new();
        model.visit(&mut |n, _| names.push(n.to_string()));
        prop_assert!(names.iter().all(|n| !n.starts_with("encoder.")));
    }

    #[test]
    fn lora_delta_rank_bounded(rank in 1..6usize, seed in any::<u64>()) {
        let base = VitWeights::<f64>::init(&EncoderConfig::tiny(), 0).unwrap();
        let cfg = AdapterConfig { rank, ..AdapterConfig::few_shot(AdapterMethod::Lora) };
        let mut set = AdapterSet::attach(&cfg, &base, seed).unwrap();
        let mut r = rng(seed);
        set.visit_mut(&mut |_, mut t| t.mapv_inplace(|_| r.random::<f64>() - 0.5));
        for layer in &set.layers {
            for (_, ad) in layer {
                let d = ad.delta().unwrap();
                let m = DMatrix::from_fn(d.nrows(), d.ncols(), |i, j| d[[i, j]]);
                let sv = m.singular_values();
                let top = sv.max();
                prop_assert!(sv.iter().filter(|&&s| s > 1e-10 * top).count() <= rank);
            }
        }
    }

    #[test]
    fn merge_matches_adapted_forward(method in method_strategy(), targets in targets_strategy(), seed in any::<u64>()) {
        let base = VitWeights::<f64>::init(&EncoderConfig::tiny(), 2).unwrap();
        let cfg = AdapterConfig { targets, ..AdapterConfig::few_shot(method) };
        let mut set = AdapterSet::attach(&cfg, &base, seed).unwrap();
        let mut r = rng(seed);
        set.visit_mut(&mut |_, mut t| t.mapv_inplace(|v| v + 0.2 * (r.random::<f64>() - 0.5)));
        let img = image(&mut r, 12, 8);
        let adapted = encode(&img, &base, Some(&set)).unwrap();
        let merged = encode(&img, &set.merge(&base).unwrap(), None).unwrap();
        prop_assert!(max_abs_diff(&adapted.grid, &merged.grid) < 1e-10);
    }

    #[test]
    fn dora_magnitude_sets_column_norms(seed in any::<u64>()) {
        let base = VitWeights::<f64>::init(&EncoderConfig::tiny(), 1).unwrap();
        let mut set = AdapterSet::attach(&AdapterConfig::few_shot(AdapterMethod::Dora), &base, seed).unwrap();
        let mut r = rng(seed);
        set.visit_mut(&mut |_, mut t| t.mapv_inplace(|v| v + 0.3 * (r.random::<f64>() - 0.5)));
        let merged = set.merge(&base).unwrap();
        for (l, layer) in set.layers.iter().enumerate() {
            for (t, ad) in layer {
                let Factors::Dora { m, .. } = &ad.factors else { unreachable!() };
                let w = &merged.blocks[l].projection(t.projections()[0]).weight;
                for (j, col) in w.axis_iter(Axis(1)).enumerate() {
                    let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
                    prop_assert!((norm - m[j].abs()).abs() < 1e-9);
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn probabilities_increase_with_bias(gh in 1..5usize, gw in 1..5usize, d in 1..6usize, seed in any::<u64>(), db in 0.01f64..3.0) {
        let mut r = rng(seed);
        let grid = cartoseg::encoder::FeatureGrid::new(Array3::from_shape_simple_fn((gh, gw, d), || r.random::<f64>() * 2.0 - 1.0));
        let w = Array1::from_shape_simple_fn(d, || r.random::<f64>() - 0.5);
        let lo = ProbeHead::new(w.clone(), -0.5);
        let hi = ProbeHead::new(w, -0.5 + db);
        for order in [HeadOrder::UpsampleFeatures, HeadOrder::UpsampleLogits, HeadOrder::UpsampleProbabilities] {
            let a = probabilities(&grid, &lo, gh * 3 + 1, gw * 2, order).unwrap();
            let b = probabilities(&grid, &hi, gh * 3 + 1, gw * 2, order).unwrap();
            prop_assert!(a.iter().zip(b.iter()).all(|(x, y)| y > x && *x > 0.0 && *y < 1.0));
        }
    }

    #[test]
    fn logit_orders_commute(gh in 1..6usize, gw in 1..6usize, d in 1..8usize, h in 6..40usize, w in 6..40usize, seed in any::<u64>()) {
        let mut r = rng(seed);
        let grid = cartoseg::encoder::FeatureGrid::new(Array3::from_shape_simple_fn((gh, gw, d), || r.random::<f64>() * 4.0 - 2.0));
        let head = ProbeHead::new(Array1::from_shape_simple_fn(d, || r.random::<f64>() - 0.5), r.random::<f64>());
        let a = dense_logits(&grid, &head, h, w, HeadOrder::UpsampleFeatures).unwrap();
        let b = dense_logits(&grid, &head, h, w, HeadOrder::UpsampleLogits).unwrap();
        prop_assert!(max_abs_diff(&a, &b) < 1e-12);
    }

    #[test]
    fn losses_bounded(h in 1..8usize, w in 1..8usize, seed in any::<u64>()) {
        let mut r = rng(seed);
        let p = Array2::from_shape_simple_fn((h, w), || match r.random_range(0..6) {
            0 => 0.0,
            1 => 1.0,
            _ => r.random::<f64>(),
        });
        let t = Mask::from_shape_simple_fn((h, w), || r.random::<bool>());
        let cfg = LossConfig::default();
        let f = focal_loss(p.view(), &t, None, cfg.focal_gamma, cfg.focal_balance).unwrap();
        let d = dice_loss(p.view(), &t, None, cfg.dice_eps).unwrap();
        prop_assert!(f >= 0.0 && f.is_finite());
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert!(total_loss(p.view(), &t, None, &cfg).unwrap().is_finite());
    }

    #[test]
    fn loss_weights_scale_linearly(h in 1..8usize, w in 1..8usize, seed in any::<u64>(), alpha in 0.1f64..20.0) {
        let mut r = rng(seed);
        let p = Array2::from_shape_simple_fn((h, w), || r.random::<f64>());
        let t = Mask::from_shape_simple_fn((h, w), || r.random::<bool>());
        let base = LossConfig { alpha, ..LossConfig::default() };
        let doubled = LossConfig { alpha: 2.0 * alpha, ..LossConfig::default() };
        let d = dice_loss(p.view(), &t, None, base.dice_eps).unwrap();
        let a = total_loss(p.view(), &t, None, &base).unwrap() - d;
        let b = total_loss(p.view(), &t, None, &doubled).unwrap() - d;
        prop_assert!((b - 2.0 * a).abs() <= 1e-12 * b.abs().max(1.0));
    }

    #[test]
    fn losses_ignore_masked_pixels(h in 1..8usize, w in 1..8usize, seed in any::<u64>()) {
        let mut r = rng(seed);
        let p = Array2::from_shape_simple_fn((h, w), || r.random::<f64>());
        let t = Mask::from_shape_simple_fn((h, w), || r.random::<bool>());
        let mut ignore = Mask::from_shape_simple_fn((h, w), || r.random::<f64>() < 0.4);
        ignore[[0, 0]] = false;
        let p2 = ndarray::Zip::from(&p).and(&ignore).map_collect(|&v, &i| if i { 1.0 - v } else { v });
        let t2 = ndarray::Zip::from(&t).and(&ignore).map_collect(|&v, &i| v ^ i);
        let cfg = LossConfig::default();
        prop_assert_eq!(
            total_loss(p.view(), &t, Some(&ignore), &cfg).unwrap(),
            total_loss(p2.view(), &t2, Some(&ignore), &cfg).unwrap()
        );
    }

    #[test]
    fn optimizer_is_deterministic(d in 1..10usize, steps in 1..20usize, seed in any::<u64>()) {
        let mut r = rng(seed);
        let start = ProbeHead::new(Array1::from_shape_simple_fn(d, || r.random::<f64>()), 0.1);
        let grads: Vec<_> = (0..steps)
            .map(|_| ProbeHead::new(Array1::from_shape_simple_fn(d, || r.random::<f64>() - 0.5), r.random::<f64>()))
            .collect();
        let cfg = OptimizerConfig { total_steps: steps, ..OptimizerConfig::default() };
        let run = || {
            let mut p = start.clone();
            let mut opt = AdamW::new(cfg.clone());
            for (i, g) in grads.iter().enumerate() {
                opt.step(&mut p, g, onecycle_lr(i, &cfg).unwrap()).unwrap();
            }
            p
        };
        let (a, b) = (run(), run());
        prop_assert!(a.w.iter().zip(b.w.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        prop_assert_eq!(a.bias().to_bits(), b.bias().to_bits());
    }

    #[test]
    fn schedule_stays_in_range(total in 1..500usize) {
        let cfg = OptimizerConfig { total_steps: total, ..OptimizerConfig::default() };
        for s in 0..=total {
            let lr = onecycle_lr(s, &cfg).unwrap();
            prop_assert!((cfg.lr_final..=cfg.lr_max).contains(&lr));
        }
    }

    #[test]
    fn d4_composition_and_inverse(g in element(), h in element(), side in 1..12usize, seed in any::<u64>()) {
        let mut r = rng(seed);
        let m = common::random_mask(&mut r, side, side, 0.4);
        let two = apply_plane(g, apply_plane(h, m.view()).unwrap().view()).unwrap();
        prop_assert_eq!(&apply_plane(compose(g, h), m.view()).unwrap(), &two);
        let back = apply_plane(inverse(g), apply_plane(g, m.view()).unwrap().view()).unwrap();
        prop_assert_eq!(&back, &m);
        let img = Array3::from_shape_simple_fn((side, side, 3), || r.random::<f32>());
        let moved = apply_hwc(g, img.view()).unwrap();
        prop_assert_eq!(apply_hwc(inverse(g), moved.view()).unwrap(), img);
    }

    #[test]
    fn d4_rectangular_inputs(g in element(), h in 1..10usize, w in 1..10usize) {
        let m = Array2::from_shape_fn((h, w), |(i, j)| i * 31 + j);
        let out = apply_plane(g, m.view());
        if g.swaps_axes() && h != w {
            prop_assert!(out.is_err());
        } else {
            let out = out.unwrap();
            let mut a: Vec<_> = out.iter().copied().collect();
            let mut b: Vec<_> = m.iter().copied().collect();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn pixel_metrics_symmetric(h in 1..16usize, w in 1..16usize, seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = common::random_mask(&mut r, h, w, 0.5);
        let b = common::random_mask(&mut r, h, w, 0.5);
        let ab = confusion(&a, &b, None).unwrap();
        let ba = confusion(&b, &a, None).unwrap();
        prop_assert_eq!(ab.iou(), ba.iou());
        prop_assert_eq!(ab.f1(), ba.f1());
        let pab = panoptic_from_masks(&a, &b, None, Connectivity::Eight).unwrap();
        let pba = panoptic_from_masks(&b, &a, None, Connectivity::Eight).unwrap();
        prop_assert_eq!(pab.pq, pba.pq);
        prop_assert_eq!(pab.tp(), pba.tp());
    }

    #[test]
    fn metrics_ignore_masked_pixels(h in 1..16usize, w in 1..16usize, seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = common::random_mask(&mut r, h, w, 0.5);
        let b = common::random_mask(&mut r, h, w, 0.5);
        let ignore = common::random_mask(&mut r, h, w, 0.3);
        let a2 = ndarray::Zip::from(&a).and(&ignore).map_collect(|&v, &i| v ^ i);
        let b2 = ndarray::Zip::from(&b).and(&ignore).map_collect(|&v, &i| v ^ (i && r.random()));
        prop_assert_eq!(confusion(&a, &b, Some(&ignore)).unwrap(), confusion(&a2, &b2, Some(&ignore)).unwrap());
        let p1 = panoptic_from_masks(&a, &b, Some(&ignore), Connectivity::Four).unwrap();
        let p2 = panoptic_from_masks(&a2, &b2, Some(&ignore), Connectivity::Four).unwrap();
        prop_assert_eq!(p1.pq, p2.pq);
    }

    #[test]
    fn components_match_flood_fill(h in 1..20usize, w in 1..20usize, density in 0.0f64..1.0, eight in any::<bool>(), seed in any::<u64>()) {
        let m = common::random_mask(&mut rng(seed), h, w, density);
        let conn = if eight { Connectivity::Eight } else { Connectivity::Four };
        let c = connected_components(&m, conn);
        let segs = common::bfs_segments(&m, eight);
        prop_assert_eq!(c.count, segs.len());
        for (i, seg) in segs.iter().enumerate() {
            // Flood fill also discovers segments in raster order of their first pixel.
            prop_assert!(seg.iter().all(|&px| c.labels[px] == i as u32 + 1));
            prop_assert_eq!(c.areas[i], seg.len());
        }
    }
}

/// Symmetric eigenvalues by cyclic Jacobi rotations.
fn jacobi_eigenvalues(mut a: Array2<f64>) -> Vec<f64> {
    let n = a.nrows();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|ij| a[ij] * a[ij]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[[p, q]].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * a[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let mut rot = Array2::<f64>::eye(n);
                rot[[p, p]] = c;
                rot[[q, q]] = c;
                rot[[p, q]] = s;
                rot[[q, p]] = -s;
                a = rot.t().dot(&a).dot(&rot);
            }
        }
    }
    let mut ev: Vec<f64> = a.diag().to_vec();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

fn random_orthogonal(r: &mut ChaCha8Rng, d: usize) -> Array2<f64> {
    let m = DMatrix::from_fn(d, d, |_, _| r.random::<f64>() - 0.5);
    let q = m.qr().q();
    Array2::from_shape_fn((d, d), |(i, j)| q[(i, j)])
}

fn features(r: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    // Anisotropic cloud so the leading directions are well separated.
    Array2::from_shape_fn((n, d), |(_, j)| (r.random::<f64>() - 0.5) * (d - j) as f64 + j as f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pca_basis_is_orthonormal_and_sorted(n in 8..40usize, d in 3..10usize, seed in any::<u64>()) {
        let x = features(&mut rng(seed), n, d);
        let b = pca_fit(x.view(), 3).unwrap();
        let gram = b.components.dot(&b.components.t());
        prop_assert!(max_abs_diff(&gram, &Array2::eye(3)) < 1e-10);
        prop_assert!(b.explained_variance.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(b.explained_variance.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn pca_matches_jacobi_oracle(n in 8..40usize, d in 3..8usize, seed in any::<u64>()) {
        let x = features(&mut rng(seed), n, d);
        let b = pca_fit(x.view(), 3).unwrap();
        let centred = &x - &x.mean_axis(Axis(0)).unwrap();
        let ev = jacobi_eigenvalues(centred.t().dot(&centred) / (n - 1) as f64);
        for k in 0..3 {
            prop_assert!((b.explained_variance[k] - ev[k]).abs() < 1e-8 * ev[0].max(1.0));
        }
    }

    #[test]
    fn pca_beats_random_subspaces(n in 8..40usize, d in 4..10usize, seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = features(&mut r, n, d);
        let b = pca_fit(x.view(), 3).unwrap();
        let centred = &x - &b.mean;
        let residual = |basis: &Array2<f64>| {
            let rec = centred.dot(&basis.t()).dot(basis);
            (&centred - &rec).mapv(|v| v * v).sum()
        };
        let best = residual(&b.components);
        for _ in 0..5 {
            let q = random_orthogonal(&mut r, d);
            let other = q.slice(ndarray::s![..3, ..]).to_owned();
            prop_assert!(best <= residual(&other) + 1e-9);
        }
    }

    #[test]
    fn pca_invariant_under_rigid_motion(n in 8..40usize, d in 3..8usize, seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = features(&mut r, n, d);
        let q = random_orthogonal(&mut r, d);
        let shift = Array1::from_shape_simple_fn(d, || r.random::<f64>() * 10.0);
        let y = x.dot(&q) + &shift;
        let a = pca_fit(x.view(), 3).unwrap();
        let b = pca_fit(y.view(), 3).unwrap();
        for k in 0..3 {
            prop_assert!((a.explained_variance[k] - b.explained_variance[k]).abs() < 1e-8 * a.explained_variance[0]);
        }
        // Scores agree up to the sign of each component.
        let pa = a.project(x.view()).unwrap();
        let pb = b.project(y.view()).unwrap();
        for k in 0..3 {
            let (ca, cb) = (pa.column(k), pb.column(k));
            let same = ca.iter().zip(cb.iter()).all(|(u, v)| (u - v).abs() < 1e-6);
            let flipped = ca.iter().zip(cb.iter()).all(|(u, v)| (u + v).abs() < 1e-6);
            prop_assert!(same || flipped);
        }
    }

    #[test]
    fn resize_preserves_constants_and_identity(h in 1..20usize, w in 1..20usize, oh in 1..40usize, ow in 1..40usize, v in -5.0f64..5.0, seed in any::<u64>()) {
        let c = Array2::from_elem((h, w), v);
        prop_assert!(resize_plane(c.view(), oh, ow).iter().all(|&x| (x - v).abs() < 1e-12));
        let img = image(&mut rng(seed), h, w);
        prop_assert_eq!(resize_hwc(img.view(), h, w), img.clone());
        let out = resize_hwc(img.view(), oh, ow);
        let (lo, hi) = img.iter().fold((f64::MAX, f64::MIN), |(a, b), &x| (a.min(x), b.max(x)));
        prop_assert!(out.iter().all(|&x| x >= lo - 1e-12 && x <= hi + 1e-12));
    }

    #[test]
    fn tiling_round_trip(h in 1..60usize, w in 1..60usize, tile in 4..24usize, seed in any::<u64>()) {
        let mut r = rng(seed);
        let img = Array3::from_shape_simple_fn((h, w, 3), || r.random::<f32>());
        let mask = common::random_mask(&mut r, h, w, 0.5);
        let scan = SegmentationSample::new(img, mask, None, "s").unwrap();
        let (tiles, layout) = tile_image(&scan, tile, tile).unwrap();
        prop_assert!(tiles.iter().all(|t| t.mask.dim() == (tile, tile)));
        let masks: Vec<_> = tiles.iter().map(|t| t.mask.clone()).collect();
        prop_assert_eq!(stitch(&masks, &layout).unwrap(), scan.mask.clone());
        let planes: Vec<_> = tiles.iter().map(|t| t.image.index_axis(Axis(2), 1).to_owned()).collect();
        prop_assert_eq!(stitch(&planes, &layout).unwrap(), scan.image.index_axis(Axis(2), 1).to_owned());
    }

    #[test]
    fn overlapping_tiles_cover_the_scan(h in 1..60usize, w in 1..60usize, tile in 4..24usize, stride_frac in 0.3f64..1.0) {
        let stride = ((tile as f64 * stride_frac) as usize).max(1);
        let layout = TileLayout::new(h, w, tile, stride).unwrap();
        let ones: Vec<_> = layout.spans.iter().map(|_| Array2::<f32>::ones((tile, tile))).collect();
        let avg = stitch_average(&ones, &layout).unwrap();
        prop_assert!(avg.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn container_round_trip(n in 0..6usize, seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut c = TensorContainer::new();
        for i in 0..n {
            let shape = [r.random_range(0..5), r.random_range(1..5)];
            if r.random() {
                let a = Array2::from_shape_simple_fn((shape[0], shape[1]), || f32::from_bits(r.random::<u32>() & 0x7f7f_ffff));
                c.insert_array2(format!("t{i}"), &a).unwrap();
            } else {
                let a = Array2::from_shape_simple_fn((shape[0], shape[1]), || r.random::<f64>() * 1e9);
                c.insert_array2(format!("t{i}"), &a).unwrap();
            }
        }
        c.set_metadata("seed", seed.to_string());
        prop_assert_eq!(TensorContainer::from_bytes(&c.to_bytes()).unwrap(), c);
    }

    #[test]
    fn few_shot_selection_is_a_function_of_data_and_seed(n in 1..30usize, k_frac in 0.0f64..1.0, seed in any::<u64>()) {
        let manifest = DatasetManifest {
            name: "m".into(),
            class_name: "c".into(),
            samples: (0..n)
                .map(|i| SampleRecord {
                    id: format!("s{i}"),
                    image: format!("images/{i}.png").into(),
                    mask: format!("masks/{i}.png").into(),
                    ignore: None,
                    role: if i % 5 == 4 { Role::Val } else { Role::Train },
                })
                .collect(),
            base_dir: Default::default(),
        };
        let n_train = manifest.split(Role::Train).len();
        prop_assume!(n_train > 0);
        let k = ((k_frac * n_train as f64) as usize).clamp(1, n_train);
        let spec = FewShotSpec { k, seed, ids: None };
        let a: Vec<_> = few_shot_select(&manifest, &spec).unwrap().iter().map(|r| r.id.clone()).collect();
        let b: Vec<_> = few_shot_select(&manifest.clone(), &spec).unwrap().iter().map(|r| r.id.clone()).collect();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.len(), k);
        let mut dedup = a.clone();
        dedup.dedup();
        prop_assert_eq!(dedup.len(), k);
        let too_many = FewShotSpec { k: n_train + 1, seed, ids: None };
        prop_assert!(few_shot_select(&manifest, &too_many).is_err());
    }
}
