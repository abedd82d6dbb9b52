//! Scalar abstraction: the crate's numerics are generic over any IEEE
//! floating-point type exposing the `num_traits::Float` surface.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar usable by every kernel in this crate.
///
/// `f32` and `f64` implement it; `f64` is re-exported as [`crate::Real`].
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from `f64`, for literals and tolerances.
    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("f64 conversion")
    }

    /// Conversion from a (possibly negative) index difference.
    fn from_index(i: isize) -> Self {
        Self::from_isize(i).expect("index conversion")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shorthand for `T::from_f64_lossy` at call sites.
#[inline]
pub fn real<T: Scalar>(x: f64) -> T {
    T::from_f64_lossy(x)
}
