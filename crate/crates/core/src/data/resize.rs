//! Separable bilinear resampling with half-pixel centres.
//!
//! Output pixel `o` samples source coordinate `(o + 0.5) * src / dst - 0.5`,
//! clamped to the valid range. Each output value is formed as
//! `a + t * (b - a)`, which reproduces constant inputs bit-exactly.

use ndarray::{Array2, Array3, ArrayView2, ArrayView3};

use crate::error::{Error, Result};
use crate::real::Real;

/// Interpolation taps along one axis: `(lower, upper, weight of upper)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisTaps {
    pub src: usize,
    pub taps: Vec<(usize, usize, f64)>,
}

impl AxisTaps {
    pub fn new(src: usize, dst: usize) -> Self {
        assert!(src > 0 && dst > 0, "resize dimensions must be positive");
        let scale = src as f64 / dst as f64;
        let taps = (0..dst)
            .map(|o| {
                if src == dst {
                    return (o, o, 0.0);
                }
                let x = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
                let i0 = x.floor() as usize;
                let i1 = (i0 + 1).min(src - 1);
                (i0, i1, x - i0 as f64)
            })
            .collect();
        AxisTaps { src, taps }
    }

    pub fn dst(&self) -> usize {
        self.taps.len()
    }
}

#[inline]
fn lerp<F: Real>(a: F, b: F, t: F) -> F {
    a + t * (b - a)
}

/// Resize a single-channel plane.
pub fn resize_plane<F: Real>(src: ArrayView2<F>, h: usize, w: usize) -> Array2<F> {
    let (sh, sw) = src.dim();
    if (sh, sw) == (h, w) {
        return src.to_owned();
    }
    let ry = AxisTaps::new(sh, h);
    let rx = AxisTaps::new(sw, w);
    Array2::from_shape_fn((h, w), |(y, x)| {
        let (y0, y1, ty) = ry.taps[y];
        let (x0, x1, tx) = rx.taps[x];
        let tx = F::from_f64_lossy(tx);
        let top = lerp(src[[y0, x0]], src[[y0, x1]], tx);
        let bot = lerp(src[[y1, x0]], src[[y1, x1]], tx);
        lerp(top, bot, F::from_f64_lossy(ty))
    })
}

/// Resize an `H x W x C` array channel-independently.
pub fn resize_hwc<F: Real>(src: ArrayView3<F>, h: usize, w: usize) -> Array3<F> {
    let (sh, sw, ch) = src.dim();
    if (sh, sw) == (h, w) {
        return src.to_owned();
    }
    let ry = AxisTaps::new(sh, h);
    let rx = AxisTaps::new(sw, w);
    let mut out = Array3::zeros((h, w, ch));
    for y in 0..h {
        let (y0, y1, ty) = ry.taps[y];
        let ty = F::from_f64_lossy(ty);
        for x in 0..w {
            let (x0, x1, tx) = rx.taps[x];
            let tx = F::from_f64_lossy(tx);
            for c in 0..ch {
                let top = lerp(src[[y0, x0, c]], src[[y0, x1, c]], tx);
                let bot = lerp(src[[y1, x0, c]], src[[y1, x1, c]], tx);
                out[[y, x, c]] = lerp(top, bot, ty);
            }
        }
    }
    out
}

/// Adjoint of [`resize_hwc`]: scatters output gradients back onto the source grid.
pub fn resize_hwc_adjoint<F: Real>(grad: ArrayView3<F>, src_h: usize, src_w: usize) -> Array3<F> {
    let (h, w, ch) = grad.dim();
    if (src_h, src_w) == (h, w) {
        return grad.to_owned();
    }
    let ry = AxisTaps::new(src_h, h);
    let rx = AxisTaps::new(src_w, w);
    let mut out = Array3::zeros((src_h, src_w, ch));
    for y in 0..h {
        let (y0, y1, ty) = ry.taps[y];
        let ty = F::from_f64_lossy(ty);
        for x in 0..w {
            let (x0, x1, tx) = rx.taps[x];
            let tx = F::from_f64_lossy(tx);
            let w00 = (F::one() - ty) * (F::one() - tx);
            let w01 = (F::one() - ty) * tx;
            let w10 = ty * (F::one() - tx);
            let w11 = ty * tx;
            for c in 0..ch {
                let g = grad[[y, x, c]];
                out[[y0, x0, c]] += w00 * g;
                out[[y0, x1, c]] += w01 * g;
                out[[y1, x0, c]] += w10 * g;
                out[[y1, x1, c]] += w11 * g;
            }
        }
    }
    out
}

/// Adjoint of [`resize_plane`].
pub fn resize_plane_adjoint<F: Real>(grad: ArrayView2<F>, src_h: usize, src_w: usize) -> Array2<F> {
    let (h, w) = grad.dim();
    let g3 = grad.to_owned().into_shape_with_order((h, w, 1)).unwrap();
    resize_hwc_adjoint(g3.view(), src_h, src_w)
        .into_shape_with_order((src_h, src_w))
        .unwrap()
}

/// Resize with a checked target size.
pub fn resize_bilinear<F: Real>(src: ArrayView3<F>, h: usize, w: usize) -> Result<Array3<F>> {
    if h == 0 || w == 0 {
        return Err(Error::Dimension(format!("resize target {h}x{w} must be positive")));
    }
    Ok(resize_hwc(src, h, w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identity_is_bit_equal() {
        let a = Array3::from_shape_fn((5, 7, 2), |(y, x, c)| (y * 13 + x * 7 + c) as f32 * 0.37);
        assert_eq!(resize_hwc(a.view(), 5, 7), a);
    }

    #[test]
    fn constant_round_trip_224_672() {
        let a = Array3::from_elem((224, 224, 3), 0.3f32);
        let up = resize_hwc(a.view(), 672, 672);
        assert!(up.iter().all(|&v| v == 0.3));
        let down = resize_hwc(up.view(), 224, 224);
        assert!(down.iter().all(|&v| v == 0.3));
    }

    #[test]
    fn two_by_two_to_four_by_four_closed_form() {
        // Source coordinate for output o is (o + 0.5) / 2 - 0.5 -> -0.25, 0.25, 0.75, 1.25,
        // clamped to [0, 1]. Values of [[0,1],[1,0]] at (y, x) are y + x - 2xy.
        let src = array![[0.0f64, 1.0], [1.0, 0.0]];
        let out = resize_plane(src.view(), 4, 4);
        let coord = [0.0, 0.25, 0.75, 1.0];
        for (i, &y) in coord.iter().enumerate() {
            for (j, &x) in coord.iter().enumerate() {
                let expect = y + x - 2.0 * x * y;
                assert!((out[[i, j]] - expect).abs() < 1e-15, "({i},{j})");
            }
        }
        assert!((out[[1, 1]] - 0.375).abs() < 1e-15);
        assert!((out[[1, 2]] - 0.625).abs() < 1e-15);
    }

    #[test]
    fn adjoint_matches_inner_product() {
        let x = Array3::from_shape_fn((3, 4, 2), |(a, b, c)| ((a * 7 + b * 3 + c) % 5) as f64 - 1.5);
        let g = Array3::from_shape_fn((7, 5, 2), |(a, b, c)| ((a * 2 + b * 5 + c * 3) % 7) as f64 * 0.25);
        let lhs = (&resize_hwc(x.view(), 7, 5) * &g).sum();
        let rhs = (&x * &resize_hwc_adjoint(g.view(), 3, 4)).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn smooth_mean_preserved() {
        let a = Array3::from_shape_fn((64, 64, 1), |(y, x, _)| {
            ((y as f64 / 10.0).sin() * (x as f64 / 13.0).cos() + 1.0) * 0.5
        });
        let up = resize_hwc(a.view(), 192, 192);
        assert!((up.mean().unwrap() - a.mean().unwrap()).abs() < 1e-3);
    }
}
