use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float as NumFloat, FromPrimitive, ToPrimitive};

/// Element type of every tensor. Implemented for `f32` (training default)
/// and `f64` (gradient verification).
pub trait Float:
    NumFloat
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Size in bytes of one element.
    const BYTES: usize;
}

impl Float for f32 {
    const BYTES: usize = 4;
}

impl Float for f64 {
    const BYTES: usize = 8;
}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Float>(x: f64) -> T {
    T::from_f64(x).expect("finite literal")
}
