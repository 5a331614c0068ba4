//! Scalar abstraction: the numerics are generic over `f32`/`f64`.

use std::fmt::Display;
use std::iter::Sum;

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar type the library is generic over.
///
/// Implemented for `f32` and `f64` through the blanket impl below; all
/// public structures default to `f64` via the aliases at the crate root.
pub trait Scalar:
    RealField + FromPrimitive + ToPrimitive + Sum + Copy + Default + Display + 'static
{
}

impl<T> Scalar for T where
    T: RealField + FromPrimitive + ToPrimitive + Sum + Copy + Default + Display + 'static
{
}

/// Converts an `f64` constant into the generic scalar type.
#[inline]
pub fn cast<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("f64 constant must be representable in the scalar type")
}
