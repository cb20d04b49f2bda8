//! Transformer forward pass with an activation cache, and its exact backward pass.

use std::borrow::Cow;

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::layers::{gelu, gelu_grad, layer_norm, layer_norm_backward, LayerNormCache};
use super::weights::{LinearWeights, VitWeights};
use super::{normalize_pixels, patchify, positional_for_grid, positional_for_grid_adjoint, FeatureGrid};
use crate::adapters::AdapterSet;
use crate::error::{Error, Result};
use crate::real::Real;
use ndarray::Array3;

/// The matrix actually used for one attention projection.
///
/// Normally `weight` is the effective (possibly adapted) matrix. When
/// `dropout_delta` is set, `weight` is the frozen base and the low-rank delta
/// is applied to a dropped-out copy of the input instead.
#[derive(Debug, Clone)]
pub struct Projection<'w, F: Clone> {
    pub weight: Cow<'w, Array2<F>>,
    pub bias: &'w Array1<F>,
    pub dropout_delta: Option<(Array2<F>, f64)>,
}

impl<'w, F: Real> Projection<'w, F> {
    pub fn plain(lin: &'w LinearWeights<F>) -> Self {
        Projection {
            weight: Cow::Borrowed(&lin.weight),
            bias: &lin.bias,
            dropout_delta: None,
        }
    }
}

/// Per-layer projections in the order q, k, v, o.
pub type LayerProjections<'w, F> = [Projection<'w, F>; 4];

pub fn plain_projections<F: Real>(weights: &VitWeights<F>) -> Vec<LayerProjections<'_, F>> {
    weights
        .blocks
        .iter()
        .map(|b| {
            [
                Projection::plain(&b.q),
                Projection::plain(&b.k),
                Projection::plain(&b.v),
                Projection::plain(&b.o),
            ]
        })
        .collect()
}

pub struct ForwardOptions<'a> {
    /// Source of adapter-dropout masks; `None` disables dropout (inference).
    pub rng: Option<&'a mut ChaCha8Rng>,
    pub keep_cache: bool,
}

impl ForwardOptions<'_> {
    pub fn inference() -> Self {
        ForwardOptions {
            rng: None,
            keep_cache: false,
        }
    }
}

struct ProjCache<F> {
    /// Dropout multipliers applied to the input of the delta branch.
    mask: Option<Array2<F>>,
}

struct BlockCache<F> {
    ln1: LayerNormCache<F>,
    u1: Array2<F>,
    q: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    attn: Vec<Array2<F>>,
    a: Array2<F>,
    proj: [ProjCache<F>; 4],
    ln2: LayerNormCache<F>,
    u2: Array2<F>,
    h1: Array2<F>,
    g: Array2<F>,
}

pub struct EncoderCache<F> {
    patches: Array2<F>,
    grid: (usize, usize),
    blocks: Vec<BlockCache<F>>,
    ln_final: LayerNormCache<F>,
}

/// Which gradients the backward pass must produce.
#[derive(Debug, Clone)]
pub struct EncoderGradNeeds {
    /// Gradients for every encoder tensor.
    pub full: bool,
    /// Per layer, whether the q/k/v/o effective-weight gradient is needed.
    pub proj: Vec<[bool; 4]>,
}

impl EncoderGradNeeds {
    pub fn none(depth: usize) -> Self {
        EncoderGradNeeds {
            full: false,
            proj: vec![[false; 4]; depth],
        }
    }

    fn any(&self) -> bool {
        self.full || self.proj.iter().flatten().any(|&b| b)
    }
}

fn linear<F: Real>(x: ArrayView2<F>, w: &LinearWeights<F>) -> Array2<F> {
    let mut y = x.dot(&w.weight);
    y += &w.bias;
    y
}

fn apply_projection<F: Real>(
    u: ArrayView2<F>,
    p: &Projection<'_, F>,
    rng: &mut Option<&mut ChaCha8Rng>,
) -> (Array2<F>, ProjCache<F>) {
    let mut y = u.dot(p.weight.as_ref());
    y += p.bias;
    let mut mask = None;
    if let Some((delta, drop)) = &p.dropout_delta {
        let m = match rng.as_deref_mut() {
            Some(r) if *drop > 0.0 => {
                let keep = 1.0 - drop;
                let scale = F::from_f64_lossy(1.0 / keep);
                Array2::from_shape_simple_fn(u.dim(), || if r.random::<f64>() < keep { scale } else { F::zero() })
            }
            _ => Array2::ones(u.dim()),
        };
        let ud = &u * &m;
        y += &ud.dot(delta);
        mask = Some(m);
    }
    (y, ProjCache { mask })
}

fn softmax_rows<F: Real>(s: &mut Array2<F>) {
    for mut row in s.rows_mut() {
        let m = row.fold(F::neg_infinity(), |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
}

/// Full encoder pass on an `H x W x C` image in `[0, 1]`.
pub fn forward<F: Real>(
    weights: &VitWeights<F>,
    projections: &[LayerProjections<'_, F>],
    image: &Array3<F>,
    mut opts: ForwardOptions<'_>,
) -> Result<(FeatureGrid<F>, Option<EncoderCache<F>>)> {
    let cfg = &weights.config;
    let (h, w, ch) = image.dim();
    if ch != cfg.in_chans {
        return Err(Error::Dimension(format!("image has {ch} channels, encoder expects {}", cfg.in_chans)));
    }
    if projections.len() != weights.blocks.len() {
        return Err(Error::Dimension("one projection set per block required".into()));
    }
    let p = cfg.patch_size;
    let x = normalize_pixels(image.view(), &cfg.pixel_mean, &cfg.pixel_std)?;
    let patches = patchify(x.view(), p)?;
    let grid = (h / p, w / p);
    let pos = positional_for_grid(weights.pos_embed.view(), cfg.pos_grid, grid);
    let mut x = super::embed_tokens(
        patches.view(),
        weights.patch_embed.weight.view(),
        weights.patch_embed.bias.view(),
        pos.view(),
        weights.cls_token.view(),
    )?;

    let heads = cfg.num_heads;
    let dh = cfg.head_dim();
    let scale = F::one() / F::of(dh).sqrt();
    let mut caches = Vec::with_capacity(if opts.keep_cache { weights.blocks.len() } else { 0 });

    for (b, projs) in weights.blocks.iter().zip(projections) {
        let (u1, ln1) = layer_norm(x.view(), b.norm1.weight.view(), b.norm1.bias.view());
        let (q, cq) = apply_projection(u1.view(), &projs[0], &mut opts.rng);
        let (k, ck) = apply_projection(u1.view(), &projs[1], &mut opts.rng);
        let (v, cv) = apply_projection(u1.view(), &projs[2], &mut opts.rng);
        let t = x.nrows();
        let mut a = Array2::zeros((t, cfg.embed_dim));
        let mut attn = Vec::with_capacity(heads);
        for hd in 0..heads {
            let cols = s![.., hd * dh..(hd + 1) * dh];
            let mut sc = q.slice(cols).dot(&k.slice(cols).t());
            sc.mapv_inplace(|v| v * scale);
            softmax_rows(&mut sc);
            a.slice_mut(cols).assign(&sc.dot(&v.slice(cols)));
            if opts.keep_cache {
                attn.push(sc);
            }
        }
        let (o, co) = apply_projection(a.view(), &projs[3], &mut opts.rng);
        x += &o;
        let (u2, ln2) = layer_norm(x.view(), b.norm2.weight.view(), b.norm2.bias.view());
        let h1 = linear(u2.view(), &b.fc1);
        let g = h1.mapv(gelu);
        x += &linear(g.view(), &b.fc2);
        if opts.keep_cache {
            caches.push(BlockCache {
                ln1,
                u1,
                q,
                k,
                v,
                attn,
                a,
                proj: [cq, ck, cv, co],
                ln2,
                u2,
                h1,
                g,
            });
        }
    }

    let (z, ln_final) = layer_norm(x.view(), weights.norm.weight.view(), weights.norm.bias.view());
    let d = cfg.embed_dim;
    let body = z.slice(s![1.., ..]).to_owned();
    let fg = FeatureGrid::new(body.into_shape_with_order((grid.0, grid.1, d)).unwrap());
    let cache = opts.keep_cache.then(|| EncoderCache {
        patches,
        grid,
        blocks: caches,
        ln_final,
    });
    Ok((fg, cache))
}

fn add_into<F: Real>(slot: &mut Option<Array2<F>>, g: Array2<F>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

/// Backward pass from `dgrid` (gradient w.r.t. the feature grid).
///
/// Adds encoder tensor gradients into `full` when `needs.full`, and the
/// effective-weight gradient of each requested projection into `proj`. For a
/// projection with input dropout the stored gradient is taken w.r.t. the
/// dropped-out input, which is what a low-rank delta needs.
pub fn backward<F: Real>(
    weights: &VitWeights<F>,
    projections: &[LayerProjections<'_, F>],
    cache: &EncoderCache<F>,
    dgrid: &Array3<F>,
    needs: &EncoderGradNeeds,
    mut full: Option<&mut VitWeights<F>>,
    proj: &mut [[Option<Array2<F>>; 4]],
) -> Result<()> {
    let cfg = &weights.config;
    let (gh, gw) = cache.grid;
    let d = cfg.embed_dim;
    if dgrid.dim() != (gh, gw, d) {
        return Err(Error::Dimension(format!(
            "feature gradient is {:?}, expected ({gh}, {gw}, {d})",
            dgrid.dim()
        )));
    }
    if needs.full && full.is_none() {
        return Err(Error::Config("full encoder gradients requested without an accumulator".into()));
    }
    if !needs.any() {
        return Ok(());
    }
    let t = gh * gw + 1;
    let mut dz = Array2::zeros((t, d));
    dz.slice_mut(s![1.., ..])
        .assign(&dgrid.to_owned().into_shape_with_order((gh * gw, d)).unwrap());
    let (mut dx, dgn, dbn) = layer_norm_backward(dz.view(), &cache.ln_final, weights.norm.weight.view());
    if let Some(fw) = full.as_deref_mut() {
        fw.norm.weight += &dgn;
        fw.norm.bias += &dbn;
    }

    // Earliest layer whose projections still need gradients; below it only
    // full training needs anything.
    let lowest = if needs.full {
        0
    } else {
        needs.proj.iter().position(|p| p.iter().any(|&b| b)).unwrap_or(weights.blocks.len())
    };

    let heads = cfg.num_heads;
    let dh = cfg.head_dim();
    let scale = F::one() / F::of(dh).sqrt();

    for li in (lowest..weights.blocks.len()).rev() {
        let b = &weights.blocks[li];
        let c = &cache.blocks[li];
        let projs = &projections[li];
        let want = needs.proj[li];

        // MLP branch.
        let dm = &dx;
        let dg = dm.dot(&b.fc2.weight.t());
        let dh1 = Zip::from(&dg).and(&c.h1).map_collect(|&g, &h| g * gelu_grad(h));
        let du2 = dh1.dot(&b.fc1.weight.t());
        if let Some(fw) = full.as_deref_mut() {
            let fb = &mut fw.blocks[li];
            fb.fc2.weight += &c.g.t().dot(dm);
            fb.fc2.bias += &dm.sum_axis(Axis(0));
            fb.fc1.weight += &c.u2.t().dot(&dh1);
            fb.fc1.bias += &dh1.sum_axis(Axis(0));
        }
        let (dx1_ln, dg2, db2) = layer_norm_backward(du2.view(), &c.ln2, b.norm2.weight.view());
        if let Some(fw) = full.as_deref_mut() {
            fw.blocks[li].norm2.weight += &dg2;
            fw.blocks[li].norm2.bias += &db2;
        }
        let dx1 = &dx + &dx1_ln;

        // Attention output projection.
        let da = proj_backward(c.a.view(), &dx1, &projs[3], &c.proj[3], 3, want[3], li, &mut full, proj);

        let t = c.q.nrows();
        let mut dq = Array2::zeros((t, d));
        let mut dk = Array2::zeros((t, d));
        let mut dv = Array2::zeros((t, d));
        for hd in 0..heads {
            let cols = s![.., hd * dh..(hd + 1) * dh];
            let pa = &c.attn[hd];
            let dout = da.slice(cols);
            let dpa = dout.dot(&c.v.slice(cols).t());
            dv.slice_mut(cols).assign(&pa.t().dot(&dout));
            let mut ds = Zip::from(&dpa).and(pa).map_collect(|&g, &p| g * p);
            let row_dot = ds.sum_axis(Axis(1));
            Zip::from(ds.rows_mut())
                .and(pa.rows())
                .and(&row_dot)
                .for_each(|mut r, prow, &rd| {
                    Zip::from(&mut r).and(&prow).for_each(|g, &p| *g = *g - p * rd);
                });
            ds.mapv_inplace(|v| v * scale);
            dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
        }
        let mut du1 = proj_backward(c.u1.view(), &dq, &projs[0], &c.proj[0], 0, want[0], li, &mut full, proj);
        du1 += &proj_backward(c.u1.view(), &dk, &projs[1], &c.proj[1], 1, want[1], li, &mut full, proj);
        du1 += &proj_backward(c.u1.view(), &dv, &projs[2], &c.proj[2], 2, want[2], li, &mut full, proj);
        let (dx0_ln, dg1, db1) = layer_norm_backward(du1.view(), &c.ln1, b.norm1.weight.view());
        if let Some(fw) = full.as_deref_mut() {
            fw.blocks[li].norm1.weight += &dg1;
            fw.blocks[li].norm1.bias += &db1;
        }
        dx = dx1 + dx0_ln;
    }

    if let (true, Some(fw)) = (needs.full, full) {
        let body = dx.slice(s![1.., ..]);
        fw.patch_embed.weight += &cache.patches.t().dot(&body);
        fw.patch_embed.bias += &body.sum_axis(Axis(0));
        fw.cls_token += &dx.row(0);
        fw.pos_embed += &positional_for_grid_adjoint(dx.view(), cfg.pos_grid, cache.grid);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn proj_backward<F: Real>(
    u: ArrayView2<F>,
    dy: &Array2<F>,
    p: &Projection<'_, F>,
    pc: &ProjCache<F>,
    which: usize,
    want: bool,
    layer: usize,
    full: &mut Option<&mut VitWeights<F>>,
    proj: &mut [[Option<Array2<F>>; 4]],
) -> Array2<F> {
    let mut du = dy.dot(&p.weight.t());
    if let Some((delta, _)) = &p.dropout_delta {
        let m = pc.mask.as_ref().expect("dropout mask cached");
        du += &(&dy.dot(&delta.t()) * m);
        if want {
            let ud = &u * m;
            add_into(&mut proj[layer][which], ud.t().dot(dy));
        }
    } else if want {
        add_into(&mut proj[layer][which], u.t().dot(dy));
    }
    if let Some(fw) = full.as_deref_mut() {
        let lin = fw.blocks[layer].projection_mut(which);
        lin.weight += &u.t().dot(dy);
        lin.bias += &dy.sum_axis(Axis(0));
    }
    du
}

/// Encode an image with optional adapters attached (inference, no dropout).
pub fn encode<F: Real>(image: &Array3<F>, weights: &VitWeights<F>, adapters: Option<&AdapterSet<F>>) -> Result<FeatureGrid<F>> {
    let projections = match adapters {
        Some(a) => a.projections(weights, false)?,
        None => plain_projections(weights),
    };
    Ok(forward(weights, &projections, image, ForwardOptions::inference())?.0)
}
