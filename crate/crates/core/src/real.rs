//! Scalar abstraction shared by every numeric routine.

use ndarray::NdFloat;
use num_traits::FromPrimitive;

use crate::data::container::Dtype;

/// Floating point type usable by the encoder, heads and optimiser.
pub trait Real: NdFloat + FromPrimitive + Default + std::iter::Sum + 'static {
    const DTYPE: Dtype;

    fn from_f64_lossy(v: f64) -> Self;

    fn to_f64_lossy(self) -> f64;

    /// Convert a count or other small integer.
    fn of(v: usize) -> Self {
        Self::from_f64_lossy(v as f64)
    }

    fn erf(self) -> Self;
}

impl Real for f32 {
    const DTYPE: Dtype = Dtype::F32;

    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }

    fn to_f64_lossy(self) -> f64 {
        self as f64
    }

    fn erf(self) -> Self {
        libm::erff(self)
    }
}

impl Real for f64 {
    const DTYPE: Dtype = Dtype::F64;

    fn from_f64_lossy(v: f64) -> Self {
        v
    }

    fn to_f64_lossy(self) -> f64 {
        self
    }

    fn erf(self) -> Self {
        libm::erf(self)
    }
}

/// Shorthand for literal constants in generic code.
#[inline]
pub(crate) fn c<F: Real>(v: f64) -> F {
    F::from_f64_lossy(v)
}
