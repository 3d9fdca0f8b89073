//! Floating point element types the engine can run on.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Element type for tensors: `f32` or `f64`.
///
/// Every reduction inside the kernels accumulates in `f64` regardless of
/// the storage type, so `to_acc`/`from_acc` are the only conversions the
/// hot loops use.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Short name written into checkpoint headers.
    const NAME: &'static str;

    fn to_acc(self) -> f64;
    fn from_acc(v: f64) -> Self;
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    #[inline(always)]
    fn to_acc(self) -> f64 {
        self
    }

    #[inline(always)]
    fn from_acc(v: f64) -> Self {
        v
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    #[inline(always)]
    fn to_acc(self) -> f64 {
        self as f64
    }

    #[inline(always)]
    fn from_acc(v: f64) -> Self {
        v as f32
    }
}
