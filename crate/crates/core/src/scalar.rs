//! Scalar abstraction shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point type the numeric core is written against (`f32` or `f64`).
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Converts an `f64` constant into `Self`.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }

    /// Tolerance for "sums to one" style invariants: 1e-12 in double precision,
    /// scaled up to the type's resolution otherwise.
    #[inline]
    fn normalization_tol() -> Self {
        let scaled = Self::epsilon() * Self::of(4096.0);
        scaled.max(Self::of(1e-12))
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// `x·ln x` with the convention `0·ln 0 = 0`.
#[inline]
pub fn xlogx<T: Scalar>(x: T) -> T {
    if x <= T::zero() {
        T::zero()
    } else {
        x * x.ln()
    }
}

/// Normalizes `v` in place; returns the original total.
pub fn normalize<T: Scalar>(v: &mut [T]) -> T {
    let total: T = v.iter().copied().sum();
    if total > T::zero() {
        for x in v.iter_mut() {
            *x = *x / total;
        }
    }
    total
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}
