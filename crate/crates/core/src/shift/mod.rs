//! Power-of-two weights: quantizers, fixed-point emulation and the
//! LinearShift / ConvShift training operators.

mod fixed;
mod ops;
mod weight;

pub use fixed::FixedPointFormat;
pub use ops::{quantize_vars, ShiftKind, ShiftVars};
pub use weight::{count_non_pow2, quantize_ps, quantize_q, ShiftWeight};
