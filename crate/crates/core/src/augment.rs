//! The eight symmetries of the square (dihedral group D4) applied jointly to
//! image, mask and ignore mask.
//!
//! Each element is stored as the 2x2 integer matrix `S` that maps an output
//! pixel's centred coordinates to the source pixel: `out[p] = in[S p]`.
//! Rotations are counter-clockwise.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array3, ArrayView2, ArrayView3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::sample::SegmentationSample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum D4Element {
    Identity,
    Rot90,
    Rot180,
    Rot270,
    /// Mirror left-right.
    FlipH,
    /// Mirror top-bottom.
    FlipV,
    /// Transpose about the main diagonal.
    FlipMainDiag,
    /// Transpose about the anti-diagonal.
    FlipAntiDiag,
}

type Mat = [[i32; 2]; 2];

impl D4Element {
    pub const ALL: [D4Element; 8] = [
        D4Element::Identity,
        D4Element::Rot90,
        D4Element::Rot180,
        D4Element::Rot270,
        D4Element::FlipH,
        D4Element::FlipV,
        D4Element::FlipMainDiag,
        D4Element::FlipAntiDiag,
    ];

    fn source_map(self) -> Mat {
        match self {
            D4Element::Identity => [[1, 0], [0, 1]],
            D4Element::Rot90 => [[0, 1], [-1, 0]],
            D4Element::Rot180 => [[-1, 0], [0, -1]],
            D4Element::Rot270 => [[0, -1], [1, 0]],
            D4Element::FlipH => [[1, 0], [0, -1]],
            D4Element::FlipV => [[-1, 0], [0, 1]],
            D4Element::FlipMainDiag => [[0, 1], [1, 0]],
            D4Element::FlipAntiDiag => [[0, -1], [-1, 0]],
        }
    }

    fn from_source_map(m: Mat) -> D4Element {
        *Self::ALL
            .iter()
            .find(|g| g.source_map() == m)
            .expect("D4 is closed under composition")
    }

    /// Whether the element swaps rows and columns (needs a square tile).
    pub fn swaps_axes(self) -> bool {
        self.source_map()[0][0] == 0
    }

    pub fn name(self) -> &'static str {
        match self {
            D4Element::Identity => "identity",
            D4Element::Rot90 => "rot90",
            D4Element::Rot180 => "rot180",
            D4Element::Rot270 => "rot270",
            D4Element::FlipH => "flip_h",
            D4Element::FlipV => "flip_v",
            D4Element::FlipMainDiag => "flip_main_diag",
            D4Element::FlipAntiDiag => "flip_anti_diag",
        }
    }
}

impl fmt::Display for D4Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for D4Element {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        D4Element::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown D4 element `{s}`")))
    }
}

fn mul(a: Mat, b: Mat) -> Mat {
    let mut out = [[0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

/// `g` after `h`: `apply(compose(g, h), s) == apply(g, apply(h, s))`.
pub fn compose(g: D4Element, h: D4Element) -> D4Element {
    D4Element::from_source_map(mul(h.source_map(), g.source_map()))
}

pub fn inverse(g: D4Element) -> D4Element {
    *D4Element::ALL
        .iter()
        .find(|&&h| compose(g, h) == D4Element::Identity)
        .expect("every element has an inverse")
}

/// Uniform draw over the eight elements.
pub fn sample_d4<R: Rng + ?Sized>(rng: &mut R) -> D4Element {
    D4Element::ALL[rng.random_range(0..8)]
}

fn check_shape(g: D4Element, h: usize, w: usize) -> Result<()> {
    if g.swaps_axes() && h != w {
        return Err(Error::Dimension(format!("{g} needs a square tile, got {h}x{w}")));
    }
    Ok(())
}

/// Source index for output pixel `(i, j)`.
#[inline]
fn source(m: &Mat, i: usize, j: usize, h: usize, w: usize) -> (usize, usize) {
    let y = 2 * i as i64 - (h as i64 - 1);
    let x = 2 * j as i64 - (w as i64 - 1);
    let sy = m[0][0] as i64 * y + m[0][1] as i64 * x;
    let sx = m[1][0] as i64 * y + m[1][1] as i64 * x;
    (((sy + h as i64 - 1) / 2) as usize, ((sx + w as i64 - 1) / 2) as usize)
}

pub fn apply_plane<T: Clone>(g: D4Element, a: ArrayView2<T>) -> Result<Array2<T>> {
    let (h, w) = a.dim();
    check_shape(g, h, w)?;
    let m = g.source_map();
    Ok(Array2::from_shape_fn((h, w), |(i, j)| a[source(&m, i, j, h, w)].clone()))
}

pub fn apply_hwc<T: Clone>(g: D4Element, a: ArrayView3<T>) -> Result<Array3<T>> {
    let (h, w, c) = a.dim();
    check_shape(g, h, w)?;
    let m = g.source_map();
    Ok(Array3::from_shape_fn((h, w, c), |(i, j, k)| {
        let (y, x) = source(&m, i, j, h, w);
        a[[y, x, k]].clone()
    }))
}

/// Transform image, mask and ignore mask with the same element.
pub fn apply(g: D4Element, s: &SegmentationSample) -> Result<SegmentationSample> {
    Ok(SegmentationSample {
        image: apply_hwc(g, s.image.view())?,
        mask: apply_plane(g, s.mask.view())?,
        ignore: s.ignore.as_ref().map(|m| apply_plane(g, m.view())).transpose()?,
        source: s.source.clone(),
        origin: s.origin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rot90_is_counter_clockwise() {
        let a = array![[1, 2], [3, 4]];
        assert_eq!(apply_plane(D4Element::Rot90, a.view()).unwrap(), array![[2, 4], [1, 3]]);
    }

    #[test]
    fn named_reflections() {
        let a = array![[1, 2], [3, 4]];
        let t = |g| apply_plane(g, a.view()).unwrap();
        assert_eq!(t(D4Element::FlipH), array![[2, 1], [4, 3]]);
        assert_eq!(t(D4Element::FlipV), array![[3, 4], [1, 2]]);
        assert_eq!(t(D4Element::FlipMainDiag), array![[1, 3], [2, 4]]);
        assert_eq!(t(D4Element::FlipAntiDiag), array![[4, 2], [3, 1]]);
    }

    #[test]
    fn group_algebra() {
        assert_eq!(compose(D4Element::Rot90, D4Element::Rot90), D4Element::Rot180);
        assert_eq!(inverse(D4Element::Rot90), D4Element::Rot270);
        for g in D4Element::ALL {
            assert_eq!(compose(g, inverse(g)), D4Element::Identity);
        }
    }

    #[test]
    fn non_square_rotation_rejected() {
        let a = Array2::<u8>::zeros((2, 3));
        assert!(apply_plane(D4Element::Rot90, a.view()).is_err());
        assert!(apply_plane(D4Element::FlipH, a.view()).is_ok());
        assert!(apply_plane(D4Element::Rot180, a.view()).is_ok());
    }

    #[test]
    fn names_round_trip() {
        for g in D4Element::ALL {
            assert_eq!(g.name().parse::<D4Element>().unwrap(), g);
        }
        assert!("rot45".parse::<D4Element>().is_err());
    }

    #[test]
    fn seeded_sequence() {
        let mut a = ChaCha8Rng::seed_from_u64(3);
        let mut b = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<_> = (0..20).map(|_| sample_d4(&mut a)).collect();
        let y: Vec<_> = (0..20).map(|_| sample_d4(&mut b)).collect();
        assert_eq!(x, y);
    }
}
