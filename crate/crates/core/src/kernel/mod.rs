//! Multiplication-free integer inference: fixed-point tensors, the 6-bit
//! packed weight format and shift-add kernels.

pub mod bench;
mod fixed;
mod network;
mod ops;
mod packed;

pub use fixed::FixedTensor;
pub use network::{IntForward, IntLayer, IntegerNetwork, ShiftLayer};
pub use ops::{multiply_matmul, shift_conv2d, shift_matmul, KernelOutput};
pub use packed::{decode, encode, PackReport, PackedShiftTensor, MAX_MAGNITUDE, SENTINEL};
