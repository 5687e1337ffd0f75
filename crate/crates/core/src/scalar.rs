//! Scalar abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};
use std::iter::{Product, Sum};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point type the learning pipeline can run on (`f32` or `f64`).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Sum + Product + Send + Sync + 'static
{
    /// Converts an `f64` literal into this scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar representable as f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Lower clipping bound for learned probabilities.
pub const PROB_FLOOR: f64 = 1e-6;
/// Upper clipping bound for learned probabilities.
pub const PROB_CEIL: f64 = 1.0 - 1e-6;

/// Clamps `x` into `[PROB_FLOOR, PROB_CEIL]`. NaN maps to the floor.
#[inline]
pub fn clip_probability<T: Scalar>(x: T) -> T {
    let lo = T::lit(PROB_FLOOR);
    let hi = T::lit(PROB_CEIL);
    if x.is_nan() || x < lo {
        lo
    } else if x > hi {
        hi
    } else {
        x
    }
}

/// Clamps a leak into `[0, PROB_CEIL]`; leaks may legitimately be zero.
#[inline]
pub fn clip_leak<T: Scalar>(x: T) -> T {
    let hi = T::lit(PROB_CEIL);
    if x.is_nan() || x < T::zero() {
        T::zero()
    } else if x > hi {
        hi
    } else {
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipping_bounds() {
        assert_eq!(clip_probability(1.02_f64), PROB_CEIL);
        assert_eq!(clip_probability(-0.3_f64), PROB_FLOOR);
        assert_eq!(clip_probability(0.4_f64), 0.4);
        assert_eq!(clip_probability(f64::NAN), PROB_FLOOR);
        assert_eq!(clip_leak(-0.01_f64), 0.0);
        assert_eq!(clip_leak(0.0_f32), 0.0);
        assert_eq!(clip_leak(1.0_f64), PROB_CEIL);
    }
}
