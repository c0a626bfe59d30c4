//! Scalar abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating point scalar used by the field, renderer, trainer and splatter.
///
/// Implemented for `f32` (production runs, checkpoints) and `f64` (gradient
/// checks and oracles).
pub trait Real:
    Float + FromPrimitive + NumAssign + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from `f64`.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }

    #[inline]
    fn as_f32(self) -> f32 {
        self.to_f32().expect("finite conversion")
    }

    /// Relative tolerance for "is this vector unit length" checks.
    fn unit_tolerance() -> Self;
}

impl Real for f32 {
    #[inline]
    fn unit_tolerance() -> Self {
        1e-4
    }
}

impl Real for f64 {
    #[inline]
    fn unit_tolerance() -> Self {
        1e-9
    }
}

#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut s = T::zero();
    for (x, y) in a.iter().zip(b) {
        s += *x * *y;
    }
    s
}

#[inline]
pub(crate) fn norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Numerically stable `ln(1 + e^x)`.
#[inline]
pub(crate) fn softplus<T: Real>(x: T) -> T {
    if x > T::of(20.0) {
        x
    } else if x < T::of(-20.0) {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub(crate) fn logit<T: Real>(p: T) -> T {
    (p / (T::one() - p)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_matches_closed_form() {
        let x = -10.0f64;
        let expect = (1.0 + (-10.0f64).exp()).ln();
        assert!((softplus(x) - expect).abs() < 1e-15);
        assert!((softplus(x) - 4.539889921686e-5).abs() < 1e-15);
        assert_eq!(softplus(50.0f64), 50.0);
    }

    #[test]
    fn sigmoid_logit_inverse() {
        for &p in &[0.01f64, 0.3, 0.5, 0.9] {
            assert!((sigmoid(logit(p)) - p).abs() < 1e-12);
        }
    }
}
