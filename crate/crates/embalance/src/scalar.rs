//! Scalar abstraction: every numerical kernel in this crate is generic over
//! the floating-point type through this trait.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar the library is generic over (`f32` or `f64`).
pub trait Scalar: RealField + Copy + FromPrimitive + ToPrimitive {}

impl<T> Scalar for T where T: RealField + Copy + FromPrimitive + ToPrimitive {}

/// Convert an `f64` literal into the working scalar type.
#[inline]
pub fn convert<T: Scalar>(value: f64) -> T {
    T::from_f64(value).expect("f64 literal not representable in scalar type")
}

/// Lossy view of a scalar as `f64`, used for error reporting and CSV output.
#[inline]
pub fn to_f64<T: Scalar>(value: T) -> f64 {
    value.to_f64().unwrap_or(f64::NAN)
}

/// `e^x - 1` without cancellation for small `x` (routed through `f64`).
#[inline]
pub fn exp_m1<T: Scalar>(x: T) -> T {
    convert(to_f64(x).exp_m1())
}
