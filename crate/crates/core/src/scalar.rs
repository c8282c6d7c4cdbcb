//! Scalar abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point type the quantization math runs on.
///
/// Implemented for `f32` and `f64`. Everything that touches on-disk storage
/// (scales, codes) goes through fixed-width types regardless of `T`, so the
/// choice only affects intermediate precision.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Round half away from zero.
    #[inline]
    fn round_half_away(self) -> Self {
        // `Float::round` already rounds half-way cases away from zero.
        self.round()
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Sum with a fixed pairwise-tree order. Same input order, same bits.
pub fn pairwise_sum<T: Real>(xs: &[T]) -> T {
    match xs.len() {
        0 => T::zero(),
        1 => xs[0],
        n if n <= 8 => xs.iter().fold(T::zero(), |a, &b| a + b),
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

/// Order-independent sum: the terms are sorted before the pairwise reduction,
/// so any permutation of `xs` produces the same bits. Inputs must not be NaN.
pub fn sorted_sum<T: Real>(xs: &mut [T]) -> T {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    pairwise_sum(xs)
}
