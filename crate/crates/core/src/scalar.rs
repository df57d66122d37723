//! Scalar types used for ratios, fitness values and agreement statistics.
//!
//! Everything computed from integer tallies (fitness, cooperation rates,
//! fingerprints, kappa) is generic over [`Scalar`], so the same code runs in
//! `f32`, `f64` or exact rational arithmetic. Quantities that need a square
//! root (population instability) use [`num_traits::Float`] instead.

use std::fmt::Debug;

use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::{FromPrimitive, Num, ToPrimitive};

/// A field-like number type that can be built from integer ratios.
pub trait Scalar: Num + Clone + PartialOrd + Debug + Send + Sync {
    /// `numerator / denominator`; `denominator` must be nonzero.
    fn from_ratio(numerator: i64, denominator: i64) -> Self;

    /// Round to the nearest integer, halves away from zero.
    fn round_half_away(&self) -> Self;

    fn to_f64(&self) -> f64;

    fn from_i64(value: i64) -> Self {
        Self::from_ratio(value, 1)
    }
}

macro_rules! impl_float_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            fn from_ratio(numerator: i64, denominator: i64) -> Self {
                assert!(denominator != 0, "zero denominator");
                numerator as $t / denominator as $t
            }

            fn round_half_away(&self) -> Self {
                // `round` on IEEE floats already rounds halves away from zero.
                self.round()
            }

            fn to_f64(&self) -> f64 {
                *self as f64
            }
        }
    };
}

impl_float_scalar!(f32);
impl_float_scalar!(f64);

/// Exact for small inputs; products of many unrelated denominators can
/// overflow, so tournaments use `BigRational`.
impl Scalar for Ratio<i64> {
    fn from_ratio(numerator: i64, denominator: i64) -> Self {
        Ratio::new(numerator, denominator)
    }

    fn round_half_away(&self) -> Self {
        self.round()
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

impl Scalar for BigRational {
    fn from_ratio(numerator: i64, denominator: i64) -> Self {
        Ratio::new(BigInt::from(numerator), BigInt::from(denominator))
    }

    fn round_half_away(&self) -> Self {
        self.round()
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or_else(|| {
            // Fallback for ratios whose parts overflow f64 individually.
            let num = self.numer().to_f64().unwrap_or(f64::NAN);
            let den = self.denom().to_f64().unwrap_or(f64::NAN);
            num / den
        })
    }
}

/// Converts a scalar holding a whole number to `u64`; negatives clamp to 0.
pub(crate) fn whole_to_u64<S: Scalar>(value: &S) -> u64 {
    let v = value.round_half_away().to_f64();
    if v <= 0.0 {
        0
    } else {
        v as u64
    }
}

/// Builds a scalar from an `f64`, exactly where the scalar type allows it.
pub fn scalar_from_f64<S: Scalar>(value: f64) -> S {
    // Dyadic expansion: exact for rationals, a no-op round trip for floats.
    let ratio = Ratio::<BigInt>::from_f64(value).expect("finite value");
    let num = ratio.numer().to_i64();
    let den = ratio.denom().to_i64();
    match (num, den) {
        (Some(n), Some(d)) => S::from_ratio(n, d),
        _ => {
            let scale = 1i64 << 52;
            S::from_ratio((value * scale as f64).round() as i64, scale)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_halves_away_from_zero() {
        assert_eq!(2.5f64.round_half_away(), 3.0);
        assert_eq!(0.5f64.round_half_away(), 1.0);
        assert_eq!(0.49f64.round_half_away(), 0.0);
        let half = <Ratio<i64> as Scalar>::from_ratio(9, 2);
        assert_eq!(half.round_half_away(), Ratio::from_integer(5));
        let big = <BigRational as Scalar>::from_ratio(1, 2);
        assert_eq!(big.round_half_away(), BigRational::from_integer(BigInt::from(1)));
    }

    #[test]
    fn from_f64_is_exact_for_rationals() {
        let r: Ratio<i64> = scalar_from_f64(0.375);
        assert_eq!(r, Ratio::new(3, 8));
        let x: f64 = scalar_from_f64(0.1);
        assert_eq!(x, 0.1);
    }

    #[test]
    fn whole_conversion_clamps() {
        assert_eq!(whole_to_u64(&-3.0f64), 0);
        assert_eq!(whole_to_u64(&7.0f64), 7);
        assert_eq!(whole_to_u64(&Ratio::new(14i64, 2)), 7);
    }
}
