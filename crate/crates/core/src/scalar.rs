//! Floating-point scalar abstraction shared by every numeric routine.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real scalar used throughout the crate: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Default
    + Debug
    + Display
    + LowerExp
    + FromStr
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal; exact for `f64`, rounded for `f32`.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("count representable")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shortest decimal text that parses back to the same value.
///
/// Plain notation in the usual magnitude range, exponent notation outside it so
/// that values such as `1e-300` stay compact.
pub fn format_real<F: Scalar>(x: F) -> String {
    let mag = x.abs();
    if x.is_zero() || (mag >= F::lit(1e-5) && mag < F::lit(1e16)) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// Index of the first maximal entry. Panics on an empty slice.
pub(crate) fn argmax<F: Scalar>(v: &[F]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Mean and population standard deviation, summed in slice order.
pub(crate) fn mean_and_population_std<F: Scalar>(xs: &[F]) -> (F, F) {
    let n = F::from_usize_lossy(xs.len());
    let mean = xs.iter().copied().sum::<F>() / n;
    let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<F>() / n;
    (mean, var.sqrt())
}
