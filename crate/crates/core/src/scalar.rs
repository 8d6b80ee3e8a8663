//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Real-valued scalar usable as a tensor element: `f32` or `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Width of the type in bits, used as a checkpoint dtype discriminator.
    const BITS: u32;

    /// Exact `2^p`, built from the exponent field. Underflow flushes to
    /// zero and overflow saturates to infinity.
    fn pow2i(p: i32) -> Self;

    /// Lossy conversion from `f64`.
    fn of(v: f64) -> Self;

    fn as_f64(self) -> f64;

    /// Returns true iff `|self|` is zero or an exact integer power of two.
    fn is_zero_or_pow2(self) -> bool;
}

impl Real for f64 {
    const BITS: u32 = 64;

    #[inline]
    fn pow2i(p: i32) -> Self {
        if p > 1023 {
            f64::INFINITY
        } else if p >= -1022 {
            f64::from_bits(((p + 1023) as u64) << 52)
        } else if p >= -1074 {
            f64::from_bits(1u64 << (p + 1074))
        } else {
            0.0
        }
    }

    #[inline]
    fn of(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }

    fn is_zero_or_pow2(self) -> bool {
        let bits = self.abs().to_bits();
        let exp = bits >> 52;
        let mantissa = bits & ((1u64 << 52) - 1);
        match exp {
            0 => mantissa.count_ones() <= 1,
            0x7ff => false,
            _ => mantissa == 0,
        }
    }
}

impl Real for f32 {
    const BITS: u32 = 32;

    #[inline]
    fn pow2i(p: i32) -> Self {
        if p > 127 {
            f32::INFINITY
        } else if p >= -126 {
            f32::from_bits(((p + 127) as u32) << 23)
        } else if p >= -149 {
            f32::from_bits(1u32 << (p + 149))
        } else {
            0.0
        }
    }

    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }

    fn is_zero_or_pow2(self) -> bool {
        let bits = self.abs().to_bits();
        let exp = bits >> 23;
        let mantissa = bits & ((1u32 << 23) - 1);
        match exp {
            0 => mantissa.count_ones() <= 1,
            0xff => false,
            _ => mantissa == 0,
        }
    }
}
