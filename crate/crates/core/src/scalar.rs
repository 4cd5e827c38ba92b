//! Scalar abstractions.
//!
//! The parameter domain (constraints, outer products, the invertibility
//! margin, covariance formulas) only needs field arithmetic and ordering, so
//! it is written against [`Field`] and works for exact rationals as well as
//! floats. Anything that takes logarithms or square roots needs [`Real`].

use std::fmt::Debug;

use num_traits::{Float, FloatConst, FromPrimitive, Num, ToPrimitive};

/// Ordered field with a lossy bridge to and from `f64`.
///
/// Implemented for `f32`, `f64` and `num_rational::Rational64`.
pub trait Field:
    Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static
{
}

impl<T> Field for T where
    T: Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static
{
}

/// Floating-point scalar used by the transcendental parts of the model.
pub trait Real: Field + Float + FloatConst {}

impl<T> Real for T where T: Field + Float + FloatConst {}

/// Converts an `f64` literal into `T`.
///
/// Panics only if `T` cannot represent finite literals, which none of the
/// supported scalars do.
#[inline]
pub fn lit<T: Field>(x: f64) -> T {
    T::from_f64(x).expect("scalar type cannot represent literal")
}

#[inline]
pub(crate) fn min<T: Field>(x: T, y: T) -> T {
    if y < x {
        y
    } else {
        x
    }
}

#[inline]
pub(crate) fn abs<T: Field>(x: T) -> T {
    if x < T::zero() {
        T::zero() - x
    } else {
        x
    }
}
