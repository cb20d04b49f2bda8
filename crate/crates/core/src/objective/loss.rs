//! Weighted focal + dice loss on probability maps.
//!
//! Both terms skip ignored pixels. The focal term is averaged over evaluated
//! pixels; the dice term is computed from sums over them.

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::data::sample::Mask;
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the focal term.
    pub alpha: f64,
    /// Weight of the dice term.
    pub beta: f64,
    pub focal_gamma: f64,
    pub focal_balance: f64,
    pub dice_eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 10.0,
            beta: 1.0,
            focal_gamma: 2.0,
            focal_balance: 0.25,
            dice_eps: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if self.dice_eps <= 0.0 {
            return Err(Error::Config("dice_eps must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.focal_balance) || self.focal_gamma < 0.0 {
            return Err(Error::Config("focal balance must be in [0, 1] and gamma >= 0".into()));
        }
        Ok(())
    }
}

fn check<F: Real>(p: &ArrayView2<F>, t: &Mask, ignore: Option<&Mask>) -> Result<()> {
    if p.dim() != t.dim() {
        return Err(Error::Dimension(format!("probabilities {:?} vs target {:?}", p.dim(), t.dim())));
    }
    if let Some(ig) = ignore {
        if ig.dim() != t.dim() {
            return Err(Error::Dimension(format!("ignore mask {:?} vs target {:?}", ig.dim(), t.dim())));
        }
    }
    Ok(())
}

fn keep(ignore: Option<&Mask>, idx: (usize, usize)) -> bool {
    ignore.is_none_or(|m| !m[idx])
}

fn floor<F: Real>() -> F {
    F::epsilon() * F::epsilon()
}

/// Per-pixel focal term and its derivative w.r.t. `p`.
fn focal_pixel<F: Real>(p: F, fg: bool, gamma: F, balance: F) -> (F, F) {
    let one = F::one();
    let tiny = floor::<F>();
    let (pt, a, sign) = if fg { (p, balance, one) } else { (one - p, one - balance, -one) };
    if pt <= tiny {
        let l = -a * (one - pt).powf(gamma) * tiny.ln();
        return (l, F::zero());
    }
    let q = one - pt;
    let lp = pt.ln();
    let loss = -a * q.powf(gamma) * lp;
    let mut d_pt = -a * q.powf(gamma) / pt;
    if gamma != F::zero() && q > F::zero() {
        d_pt = d_pt + a * gamma * q.powf(gamma - one) * lp;
    }
    (loss, sign * d_pt)
}

pub fn focal_loss<F: Real>(p: ArrayView2<F>, target: &Mask, ignore: Option<&Mask>, gamma: f64, balance: f64) -> Result<F> {
    Ok(focal_with_grad(p, target, ignore, gamma, balance)?.0)
}

fn focal_with_grad<F: Real>(
    p: ArrayView2<F>,
    target: &Mask,
    ignore: Option<&Mask>,
    gamma: f64,
    balance: f64,
) -> Result<(F, Array2<F>)> {
    check(&p, target, ignore)?;
    let (g, a) = (F::from_f64_lossy(gamma), F::from_f64_lossy(balance));
    let mut sum = F::zero();
    let mut n = 0usize;
    let mut grad = Array2::zeros(p.dim());
    for (idx, &pv) in p.indexed_iter() {
        if !keep(ignore, idx) {
            continue;
        }
        let (l, d) = focal_pixel(pv, target[idx], g, a);
        sum += l;
        grad[idx] = d;
        n += 1;
    }
    if n == 0 {
        return Ok((F::zero(), grad));
    }
    let nf = F::of(n);
    grad.mapv_inplace(|v| v / nf);
    Ok((sum / nf, grad))
}

pub fn dice_loss<F: Real>(p: ArrayView2<F>, target: &Mask, ignore: Option<&Mask>, eps: f64) -> Result<F> {
    Ok(dice_with_grad(p, target, ignore, eps)?.0)
}

fn dice_with_grad<F: Real>(p: ArrayView2<F>, target: &Mask, ignore: Option<&Mask>, eps: f64) -> Result<(F, Array2<F>)> {
    check(&p, target, ignore)?;
    let eps = F::from_f64_lossy(eps);
    let (mut inter, mut ps, mut ts) = (F::zero(), F::zero(), F::zero());
    for (idx, &pv) in p.indexed_iter() {
        if !keep(ignore, idx) {
            continue;
        }
        ps += pv;
        if target[idx] {
            inter += pv;
            ts += F::one();
        }
    }
    let two = F::one() + F::one();
    let num = two * inter + eps;
    let den = ps + ts + eps;
    let loss = F::one() - num / den;
    let mut grad = Array2::zeros(p.dim());
    Zip::indexed(&mut grad).for_each(|idx, g| {
        if keep(ignore, idx) {
            let t = if target[idx] { F::one() } else { F::zero() };
            *g = -(two * t * den - num) / (den * den);
        }
    });
    Ok((loss, grad))
}

/// `alpha * focal + beta * dice`.
pub fn total_loss<F: Real>(p: ArrayView2<F>, target: &Mask, ignore: Option<&Mask>, cfg: &LossConfig) -> Result<F> {
    Ok(total_loss_grad(p, target, ignore, cfg)?.0)
}

/// Loss and its gradient w.r.t. the probabilities.
pub fn total_loss_grad<F: Real>(
    p: ArrayView2<F>,
    target: &Mask,
    ignore: Option<&Mask>,
    cfg: &LossConfig,
) -> Result<(F, Array2<F>)> {
    let (fl, fg) = focal_with_grad(p, target, ignore, cfg.focal_gamma, cfg.focal_balance)?;
    let (dl, dg) = dice_with_grad(p, target, ignore, cfg.dice_eps)?;
    let (a, b) = (F::from_f64_lossy(cfg.alpha), F::from_f64_lossy(cfg.beta));
    Ok((a * fl + b * dl, fg * a + &(dg * b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn focal_single_pixel_hand_value() {
        let p = array![[0.6f64]];
        let t = array![[true]];
        let l = focal_loss(p.view(), &t, None, 2.0, 0.25).unwrap();
        let expect = 0.25 * 0.4f64.powi(2) * -(0.6f64.ln());
        assert!((l - expect).abs() < 1e-15);
        assert!((l - 0.020433).abs() < 1e-6);
    }

    #[test]
    fn dice_hand_value() {
        let p = array![[1.0f64, 0.0, 0.0, 0.0]];
        let t = array![[true, true, false, false]];
        assert!((dice_loss(p.view(), &t, None, 1.0).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn dice_perfect_and_disjoint() {
        let t = array![[true, false]];
        let p = array![[1.0f64, 0.0]];
        assert_eq!(dice_loss(p.view(), &t, None, 1.0).unwrap(), 0.0);
        let q = array![[0.0f64, 1.0]];
        assert!((dice_loss(q.view(), &t, None, 1e-12).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ignored_pixels_do_not_count() {
        let p = array![[0.9f64, 0.2, 0.7]];
        let t = array![[true, false, false]];
        let ig = array![[false, false, true]];
        let mut p2 = p.clone();
        p2[[0, 2]] = 0.01;
        let cfg = LossConfig::default();
        let a = total_loss(p.view(), &t, Some(&ig), &cfg).unwrap();
        let b = total_loss(p2.view(), &t, Some(&ig), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = array![[0.3f64, 0.8, 0.55], [0.05, 0.97, 0.4]];
        let t = array![[true, false, true], [false, true, false]];
        let ig = array![[false, false, false], [false, false, true]];
        let cfg = LossConfig::default();
        let (_, g) = total_loss_grad(p.view(), &t, Some(&ig), &cfg).unwrap();
        let h = 1e-7;
        for idx in [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)] {
            let mut pp = p.clone();
            pp[idx] += h;
            let mut pm = p.clone();
            pm[idx] -= h;
            let fd = (total_loss(pp.view(), &t, Some(&ig), &cfg).unwrap()
                - total_loss(pm.view(), &t, Some(&ig), &cfg).unwrap())
                / (2.0 * h);
            assert!((fd - g[idx]).abs() < 1e-6, "{idx:?}: {fd} vs {}", g[idx]);
        }
    }

    #[test]
    fn shape_mismatch() {
        let p = Array2::<f64>::zeros((2, 2));
        let t = Mask::from_elem((2, 3), false);
        assert!(matches!(focal_loss(p.view(), &t, None, 2.0, 0.25), Err(Error::Dimension(_))));
        assert!(matches!(dice_loss(p.view(), &t, None, 1.0), Err(Error::Dimension(_))));
    }
}
