use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Signed fixed-point format with `fraction_bits` fractional bits in a
/// `total_bits`-wide two's-complement integer. Real value = integer / 2^f.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedPointFormat {
    pub total_bits: u32,
    pub fraction_bits: u32,
}

impl Default for FixedPointFormat {
    /// Q16.16.
    fn default() -> Self {
        Self {
            total_bits: 32,
            fraction_bits: 16,
        }
    }
}

impl FixedPointFormat {
    pub fn new(total_bits: u32, fraction_bits: u32) -> Result<Self> {
        if fraction_bits == 0 || fraction_bits >= total_bits || total_bits > 32 {
            return Err(Error::InvalidArgument(format!(
                "fixed-point format needs 0 < fraction_bits < total_bits <= 32, got ({total_bits}, {fraction_bits})"
            )));
        }
        Ok(Self {
            total_bits,
            fraction_bits,
        })
    }

    /// Largest representable integer code.
    pub fn max_code(&self) -> i64 {
        (1i64 << (self.total_bits - 1)) - 1
    }

    pub fn min_code(&self) -> i64 {
        -(1i64 << (self.total_bits - 1))
    }

    /// `2^fraction_bits`.
    pub fn scale(&self) -> f64 {
        (1u64 << self.fraction_bits) as f64
    }

    /// Weight of one least-significant bit.
    pub fn resolution(&self) -> f64 {
        1.0 / self.scale()
    }

    /// Nearest code (ties away from zero), saturated to the format range.
    pub fn to_code(&self, v: f64) -> i32 {
        let c = (v * self.scale()).round();
        c.clamp(self.min_code() as f64, self.max_code() as f64) as i32
    }

    pub fn saturate(&self, code: i64) -> (i32, bool) {
        if code > self.max_code() {
            (self.max_code() as i32, true)
        } else if code < self.min_code() {
            (self.min_code() as i32, true)
        } else {
            (code as i32, false)
        }
    }

    pub fn from_code(&self, code: i32) -> f64 {
        code as f64 / self.scale()
    }

    /// `round(v·2^f)/2^f`, saturating at the format bounds.
    pub fn round_value<T: Real>(&self, v: T) -> T {
        let s = T::of(self.scale());
        let lo = T::of(self.min_code() as f64);
        let hi = T::of(self.max_code() as f64);
        (v * s).round().max(lo).min(hi) / s
    }

    pub fn round_tensor<T: Real>(&self, t: &Tensor<T>) -> Tensor<T> {
        t.map(|v| self.round_value(v))
    }
}
