//! Numeric abstractions shared by the metric, weighting and projection code.
//!
//! Two families are used:
//!
//! * [`Scalar`] covers anything that can hold a ratio of pixel counts: `f32`,
//!   `f64` and exact rationals ([`Rational64`], [`BigRational`]). Metrics and class weights are
//!   generic over it, so the same code path yields either floating point or
//!   exact results.
//! * [`Float`] is the real-valued subset needed for trigonometry in the
//!   Web-Mercator projection.

use std::fmt::Debug;

use num_bigint::BigInt;
use num_rational::{BigRational, Rational64};
use num_traits::{FloatConst, FromPrimitive, Num, ToPrimitive};

/// A field-like number type that can represent ratios of counts.
pub trait Scalar: Num + Clone + PartialOrd + Debug + Send + Sync {
    /// Lossless (for rationals) or nearest (for floats) conversion of a count.
    fn from_count(n: u64) -> Self;

    /// Approximate value, for reporting.
    fn as_f64(&self) -> f64;

    fn ratio(num: u64, den: u64) -> Self {
        Self::from_count(num) / Self::from_count(den)
    }
}

macro_rules! float_scalar {
    ($($t:ty)*) => ($(
        impl Scalar for $t {
            fn from_count(n: u64) -> Self {
                n as $t
            }

            fn as_f64(&self) -> f64 {
                *self as f64
            }
        }
    )*)
}

float_scalar!(f32 f64);

impl Scalar for Rational64 {
    fn from_count(n: u64) -> Self {
        let n = i64::try_from(n).expect("pixel count exceeds i64 range");
        Rational64::from_integer(n)
    }

    fn as_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

/// Never overflows; the denominators of normalized weights grow with the
/// product of the class counts.
impl Scalar for BigRational {
    fn from_count(n: u64) -> Self {
        BigRational::from_integer(BigInt::from(n))
    }

    fn as_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

/// Real scalar used by the projection math.
pub trait Float: num_traits::Float + FloatConst + FromPrimitive + Scalar {
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in every float type")
    }
}

impl Float for f32 {}
impl Float for f64 {}

/// Arithmetic mean of a non-empty slice.
pub(crate) fn mean<T: Scalar>(values: &[T]) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    let sum = values.iter().cloned().fold(T::zero(), |a, b| a + b);
    Some(sum / T::from_count(values.len() as u64))
}
