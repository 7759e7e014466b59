use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point element type for embedding vectors and similarity statistics.
///
/// Implemented for `f32` and `f64`. Accumulations happen in the scalar type
/// itself, so `f64` is the type to use when comparing against reference values
/// at tight tolerances.
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
    /// Lossless-as-possible conversion from the on-disk element type.
    fn from_stored(v: f32) -> Self;

    /// Narrowing conversion to the on-disk element type.
    fn to_stored(self) -> f32;

    fn from_usize(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("usize fits in a float")
    }

    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("float converts to f64")
    }
}

impl Scalar for f32 {
    fn from_stored(v: f32) -> Self {
        v
    }

    fn to_stored(self) -> f32 {
        self
    }
}

impl Scalar for f64 {
    fn from_stored(v: f32) -> Self {
        v as f64
    }

    fn to_stored(self) -> f32 {
        self as f32
    }
}
