//! LayerNorm and GELU with their backward passes, row-wise over `T x D` activations.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use crate::real::{c, Real};

pub const LN_EPS: f64 = 1e-6;

pub struct LayerNormCache<F> {
    pub xhat: Array2<F>,
    pub rstd: Array1<F>,
}

pub fn layer_norm<F: Real>(x: ArrayView2<F>, gamma: ArrayView1<F>, beta: ArrayView1<F>) -> (Array2<F>, LayerNormCache<F>) {
    let (t, d) = x.dim();
    let df = F::of(d);
    let eps = c::<F>(LN_EPS);
    let mut xhat = Array2::zeros((t, d));
    let mut rstd = Array1::zeros(t);
    for (i, row) in x.outer_iter().enumerate() {
        let mean = row.sum() / df;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / df;
        let r = F::one() / (var + eps).sqrt();
        rstd[i] = r;
        Zip::from(xhat.row_mut(i)).and(&row).for_each(|o, &v| *o = (v - mean) * r);
    }
    let mut y = xhat.clone();
    Zip::from(y.rows_mut()).for_each(|mut row| {
        Zip::from(&mut row).and(&gamma).and(&beta).for_each(|o, &g, &b| *o = *o * g + b);
    });
    (y, LayerNormCache { xhat, rstd })
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn layer_norm_backward<F: Real>(
    dy: ArrayView2<F>,
    cache: &LayerNormCache<F>,
    gamma: ArrayView1<F>,
) -> (Array2<F>, Array1<F>, Array1<F>) {
    let (t, d) = dy.dim();
    let df = F::of(d);
    let dgamma = (&dy * &cache.xhat).sum_axis(Axis(0));
    let dbeta = dy.sum_axis(Axis(0));
    let mut dx = Array2::zeros((t, d));
    for i in 0..t {
        let xh = cache.xhat.row(i);
        let dxhat: Array1<F> = &dy.row(i) * &gamma;
        let m1 = dxhat.sum() / df;
        let m2 = (&dxhat * &xh).sum() / df;
        let r = cache.rstd[i];
        Zip::from(dx.row_mut(i))
            .and(&dxhat)
            .and(&xh)
            .for_each(|o, &g, &h| *o = r * (g - m1 - h * m2));
    }
    (dx, dgamma, dbeta)
}

/// Exact (erf) GELU.
pub fn gelu<F: Real>(x: F) -> F {
    c::<F>(0.5) * x * (F::one() + (x * c::<F>(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

pub fn gelu_grad<F: Real>(x: F) -> F {
    let cdf = c::<F>(0.5) * (F::one() + (x * c::<F>(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * c::<F>(0.5)).exp() * c::<F>(0.398_942_280_401_432_7);
    cdf + x * pdf
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn layer_norm_rows_are_standardised() {
        let x = array![[1.0f64, 2.0, 3.0, 4.0], [-1.0, 0.5, 0.5, 10.0]];
        let g = Array1::ones(4);
        let b = Array1::zeros(4);
        let (y, _) = layer_norm(x.view(), g.view(), b.view());
        for row in y.outer_iter() {
            assert!(row.sum().abs() < 1e-12);
            assert!((row.mapv(|v| v * v).sum() / 4.0 - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn layer_norm_backward_matches_finite_differences() {
        let x = array![[0.3f64, -1.2, 2.0], [1.0, 0.0, -0.5]];
        let g = array![1.5, -0.5, 0.8];
        let b = array![0.1, 0.2, 0.3];
        let w = array![[0.7, -1.1, 0.4], [0.2, 0.9, -0.3]];
        let f = |x: &Array2<f64>| (&layer_norm(x.view(), g.view(), b.view()).0 * &w).sum();
        let (_, cache) = layer_norm(x.view(), g.view(), b.view());
        let (dx, _, _) = layer_norm_backward(w.view(), &cache, g.view());
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..3 {
                let mut xp = x.clone();
                xp[[i, j]] += h;
                let mut xm = x.clone();
                xm[[i, j]] -= h;
                let fd = (f(&xp) - f(&xm)) / (2.0 * h);
                assert!((fd - dx[[i, j]]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn gelu_values() {
        assert_eq!(gelu(0.0f64), 0.0);
        assert!((gelu(1.0f64) - 0.841_344_746_068_542_9).abs() < 1e-12);
        let h = 1e-6;
        for &x in &[-2.0f64, -0.3, 0.0, 0.7, 3.0] {
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
