//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point scalar usable by the estimation stack (`f32` or `f64`).
///
/// Tolerances throughout the crate are written as `f64` literals tuned for
/// double precision. [`Real::tol`] clamps them to a floor that the type can
/// actually resolve, so the same code path runs in single precision with
/// proportionally looser acceptance.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + Display + Debug + Send + Sync + 'static {
    /// Smallest tolerance this precision can meaningfully enforce.
    const TOL_FLOOR: f64;

    #[inline]
    fn lit(v: f64) -> Self {
        nalgebra::convert(v)
    }

    #[inline]
    fn tol(v: f64) -> Self {
        Self::lit(v.max(Self::TOL_FLOOR))
    }

    #[inline]
    fn from_index(i: usize) -> Self {
        <Self as FromPrimitive>::from_usize(i).expect("index fits in a float")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Real for f64 {
    const TOL_FLOOR: f64 = 0.0;
}

impl Real for f32 {
    const TOL_FLOOR: f64 = 1e-5;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tolerance_floor_applies_only_to_single_precision() {
        assert_eq!(f64::tol(1e-12), 1e-12);
        assert_eq!(f32::tol(1e-12), 1e-5_f32);
        assert_eq!(f32::tol(1e-3), 1e-3_f32);
    }

    #[test]
    fn conversions() {
        assert_eq!(f64::from_index(7), 7.0);
        assert_eq!(2.5_f32.as_f64(), 2.5);
        assert_eq!(f32::lit(0.25), 0.25_f32);
    }
}
