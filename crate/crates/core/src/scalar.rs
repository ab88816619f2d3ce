//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point element type for score and logit matrices: `f32` or `f64`.
///
/// Reductions (means, sums, log-likelihoods) are always carried out in `f64`
/// regardless of the element type, then narrowed back.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn of_f64(x: f64) -> Self {
        Self::from_f64(x).unwrap_or_else(Self::nan)
    }

    fn of_usize(x: usize) -> Self {
        Self::from_usize(x).unwrap_or_else(Self::nan)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Left-to-right sum in `f64`.
pub(crate) fn sum_f64<T: Scalar>(xs: impl IntoIterator<Item = T>) -> f64 {
    let mut acc = 0.0f64;
    for x in xs {
        acc += x.as_f64();
    }
    acc
}

/// Left-to-right mean in `f64`. Empty input yields NaN.
pub(crate) fn mean_f64<T: Scalar>(xs: &[T]) -> f64 {
    sum_f64(xs.iter().copied()) / xs.len() as f64
}
