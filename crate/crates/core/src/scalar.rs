//! Floating-point abstraction so the numeric pipeline runs at f32 for
//! training throughput and at f64 for oracles and gradient checks.

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssignOps};
use rustfft::FftNum;

/// Scalar type the signal processing and model code is generic over.
pub trait Scalar:
    Float
    + FromPrimitive
    + NumAssignOps
    + LinalgScalar
    + ScalarOperand
    + FftNum
    + std::fmt::Display
    + std::iter::Sum
    + Send
    + Sync
    + 'static
{
    fn from_f(x: f64) -> Self;
    fn to_f(self) -> f64;

    fn from_us(n: usize) -> Self {
        Self::from_f(n as f64)
    }

    /// Exponential for bulk activation work. Exact at f64; at f32 a
    /// polynomial approximation accurate to ~1e-7 relative that the
    /// compiler can vectorize, since libm calls dominate training time.
    fn exp_bulk(self) -> Self;

    /// Hyperbolic tangent for bulk activation work; exact at f64,
    /// approximated (~1e-7 absolute) and clamped at f32.
    fn tanh_bulk(self) -> Self;
}

impl Scalar for f32 {
    fn from_f(x: f64) -> Self {
        x as f32
    }
    fn to_f(self) -> f64 {
        self as f64
    }

    #[inline]
    fn exp_bulk(self) -> Self {
        let x = self.clamp(-87.0, 88.0);
        let z = x * std::f32::consts::LOG2_E;
        let n = z.round();
        // Cody-Waite split of ln 2 keeps the reduction exact
        let r = (x - n * 0.693_359_375) + n * 2.121_944_4e-4;
        let p = 1.0
            + r * (1.0
                + r * (0.499_999_94
                    + r * (0.166_666_67 + r * (0.041_666_67 + r * 0.008_368_91))));
        f32::from_bits((((n as i32) + 127) << 23) as u32) * p
    }

    #[inline]
    fn tanh_bulk(self) -> Self {
        // Lambert continued-fraction ratio, clamped into [-1, 1]
        let x = self.clamp(-6.0, 6.0);
        let x2 = x * x;
        let a = x * (135_135.0 + x2 * (17_325.0 + x2 * (378.0 + x2)));
        let b = 135_135.0 + x2 * (62_370.0 + x2 * (3_150.0 + x2 * 28.0));
        (a / b).clamp(-1.0, 1.0)
    }
}

impl Scalar for f64 {
    fn from_f(x: f64) -> Self {
        x
    }
    fn to_f(self) -> f64 {
        self
    }

    #[inline]
    fn exp_bulk(self) -> Self {
        self.exp()
    }

    #[inline]
    fn tanh_bulk(self) -> Self {
        self.tanh()
    }
}
