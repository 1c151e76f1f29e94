//! Scalar abstraction shared by the scoring code.
//!
//! Scores are computed over any type implementing [`Scalar`]: `f32`, `f64`,
//! or the exact rational [`Ratio<i64>`]. Metrics that need square roots or
//! fractional powers use [`num_traits::Float`] instead.

use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::{FromPrimitive, Num, ToPrimitive};

/// A numeric type that scores can be accumulated in.
pub trait Scalar: Num + Copy + PartialOrd + Debug + FromPrimitive + ToPrimitive {
    /// The value `numer / denom`, rounded once for inexact types.
    fn ratio(numer: i64, denom: i64) -> Self;

    fn from_count(n: usize) -> Self {
        Self::ratio(n as i64, 1)
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f64 {
    fn ratio(numer: i64, denom: i64) -> Self {
        numer as f64 / denom as f64
    }
}

impl Scalar for f32 {
    fn ratio(numer: i64, denom: i64) -> Self {
        numer as f32 / denom as f32
    }
}

impl Scalar for Ratio<i64> {
    fn ratio(numer: i64, denom: i64) -> Self {
        Ratio::new(numer, denom)
    }
}

/// Arithmetic mean, summed left to right. `None` for an empty slice.
pub fn mean<T: Scalar>(values: &[T]) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    let sum = values.iter().fold(T::zero(), |acc, v| acc + *v);
    Some(sum / T::from_count(values.len()))
}
