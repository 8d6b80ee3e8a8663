//! 6-bit weight codes: bit 5 is the sign (set = negative), bits 0..4 the
//! magnitude `m` of the exponent, so a code stands for `±2^-m`. Code 63
//! (negative, `m = 31`) is reserved for an exact zero.
//!
//! Codes are stored as a little-endian bit stream: code `i` occupies bits
//! `6i .. 6i+5`, where bit `b` is bit `b % 8` of byte `b / 8`. Four codes
//! fill three bytes; unused high bits of the last byte are zero.

use crate::error::{shape_err, Error, Result};
use crate::shift::ShiftWeight;

pub const SENTINEL: u8 = 63;
pub const MAX_MAGNITUDE: u8 = 31;

/// Code for `±2^-m`; `(true, 31)` collides with the sentinel.
pub fn encode(negative: bool, m: u8) -> u8 {
    debug_assert!(m <= MAX_MAGNITUDE);
    (u8::from(negative) << 5) | m
}

/// `None` for the zero sentinel, otherwise `(negative, m)`.
pub fn decode(code: u8) -> Option<(bool, u8)> {
    debug_assert!(code < 64);
    (code != SENTINEL).then_some((code & 0x20 != 0, code & 0x1f))
}

/// What [`PackedShiftTensor::pack`] had to change.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PackReport {
    /// Positive exponents clamped to `m = 0`.
    pub saturated: usize,
    /// Nonzero weights below `2^-31` (or exactly `-2^-31`) stored as zero.
    pub flushed: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedShiftTensor {
    shape: Vec<usize>,
    len: usize,
    bytes: Vec<u8>,
}

fn payload_len(n: usize) -> usize {
    (6 * n).div_ceil(8)
}

impl PackedShiftTensor {
    pub fn pack(sw: &ShiftWeight) -> (Self, PackReport) {
        let mut report = PackReport::default();
        let codes: Vec<u8> = sw
            .shifts()
            .iter()
            .zip(sw.signs())
            .map(|(&p, &s)| {
                if s == 0 {
                    return SENTINEL;
                }
                if p > 0 {
                    report.saturated += 1;
                    return encode(s < 0, 0);
                }
                let code = if p < -i32::from(MAX_MAGNITUDE) {
                    SENTINEL
                } else {
                    encode(s < 0, (-p) as u8)
                };
                if code == SENTINEL {
                    report.flushed += 1;
                }
                code
            })
            .collect();
        (Self::from_codes(sw.shape(), &codes).expect("codes are 6-bit"), report)
    }

    pub fn from_codes(shape: &[usize], codes: &[u8]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if codes.len() != n {
            return shape_err(format!("{} codes for shape {shape:?}", codes.len()));
        }
        let mut bytes = vec![0u8; payload_len(n)];
        for (i, &c) in codes.iter().enumerate() {
            if c >= 64 {
                return Err(Error::Domain(format!("code {c} does not fit in 6 bits")));
            }
            let bit = 6 * i;
            let (byte, off) = (bit / 8, bit % 8);
            bytes[byte] |= c << off;
            if off > 2 {
                bytes[byte + 1] |= c >> (8 - off);
            }
        }
        Ok(Self {
            shape: shape.to_vec(),
            len: n,
            bytes,
        })
    }

    /// Wraps a serialized payload; its length and padding bits are checked.
    pub fn from_bytes(shape: &[usize], bytes: Vec<u8>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if bytes.len() != payload_len(n) {
            return Err(Error::Format(format!(
                "{} packed bytes for {n} codes, expected {}",
                bytes.len(),
                payload_len(n)
            )));
        }
        let tail_bits = 8 * bytes.len() - 6 * n;
        if tail_bits > 0 && bytes.last().is_some_and(|&b| b >> (8 - tail_bits) != 0) {
            return Err(Error::Format("nonzero padding bits in packed payload".into()));
        }
        Ok(Self {
            shape: shape.to_vec(),
            len: n,
            bytes,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn code(&self, i: usize) -> u8 {
        assert!(i < self.len, "code index {i} out of range");
        let bit = 6 * i;
        let (byte, off) = (bit / 8, bit % 8);
        let mut word = u16::from(self.bytes[byte]);
        if off > 2 {
            word |= u16::from(self.bytes[byte + 1]) << 8;
        }
        ((word >> off) & 0x3f) as u8
    }

    pub fn codes(&self) -> Vec<u8> {
        (0..self.len).map(|i| self.code(i)).collect()
    }

    /// Back to shifts and signs; the sentinel becomes `S̃ = 0, P̃ = 0`.
    pub fn unpack(&self) -> ShiftWeight {
        let (shift, sign) = self
            .codes()
            .into_iter()
            .map(|c| match decode(c) {
                None => (0, 0),
                Some((neg, m)) => (-i32::from(m), if neg { -1 } else { 1 }),
            })
            .unzip();
        ShiftWeight::new(&self.shape, shift, sign).expect("decoded signs are ternary")
    }
}
