//! Shift-add kernels. A weight `±2^-m` applied to an activation code `x` on
//! the `2^-f` grid contributes `±(x >> m)`: an arithmetic shift, so the
//! magnitude is floored before the sign is applied. Terms are accumulated
//! in 64 bits and the sum saturates to the format range once, at the end.

use crate::error::{shape_err, Result};
use crate::linalg::ConvGeometry;
use crate::shift::FixedPointFormat;

use super::fixed::FixedTensor;
use super::packed::{decode, PackedShiftTensor};

/// Kernel result and the number of outputs that hit the format bounds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelOutput {
    pub out: FixedTensor,
    pub saturated: usize,
}

/// Codes expanded for the inner loop: a shift amount and two lane masks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Decoded {
    shift: Vec<i32>,
    /// `-1` where the weight is negative.
    neg: Vec<i32>,
    /// `0` for the zero sentinel, `-1` otherwise.
    keep: Vec<i32>,
}

impl Decoded {
    pub(crate) fn new(w: &PackedShiftTensor) -> Self {
        let n = w.len();
        let mut d = Self {
            shift: Vec::with_capacity(n),
            neg: Vec::with_capacity(n),
            keep: Vec::with_capacity(n),
        };
        for c in w.codes() {
            let (shift, neg, keep) = match decode(c) {
                None => (0, 0, 0),
                Some((negative, m)) => (i32::from(m), -i32::from(negative), -1),
            };
            d.shift.push(shift);
            d.neg.push(neg);
            d.keep.push(keep);
        }
        d
    }
}

/// Four activation rows against one weight row, so each decoded weight is
/// loaded once per four products.
#[inline]
fn shift_dot4(x: [&[i32]; 4], shift: &[i32], neg: &[i32], keep: &[i32]) -> [i64; 4] {
    let n = shift.len();
    let (neg, keep) = (&neg[..n], &keep[..n]);
    let x = x.map(|r| &r[..n]);
    let mut acc = [0i64; 4];
    for i in 0..n {
        let (sh, ng, kp) = (shift[i], i64::from(neg[i]), i64::from(keep[i]));
        for r in 0..4 {
            let t = i64::from(x[r][i] >> sh);
            acc[r] += ((t ^ ng) - ng) & kp;
        }
    }
    acc
}

/// `out[i, j] = sat(b[j] + Σ_k ±(x[i, k] >> m[j, k]))` over `rows` rows.
pub(crate) fn shift_rows(
    x: &[i32],
    rows: usize,
    k: usize,
    w: &Decoded,
    bias: &[i32],
    fmt: FixedPointFormat,
) -> (Vec<i32>, usize) {
    let n = bias.len();
    debug_assert_eq!(x.len(), rows * k);
    debug_assert_eq!(w.shift.len(), n * k);
    let mut acc = vec![0i64; rows * n];
    let zero = vec![0i32; k];
    for j in 0..n {
        let range = j * k..(j + 1) * k;
        let (sh, ng, kp) = (&w.shift[range.clone()], &w.neg[range.clone()], &w.keep[range]);
        for i0 in (0..rows).step_by(4) {
            let row = |r: usize| {
                if i0 + r < rows {
                    &x[(i0 + r) * k..(i0 + r + 1) * k]
                } else {
                    &zero[..]
                }
            };
            let sums = shift_dot4([row(0), row(1), row(2), row(3)], sh, ng, kp);
            for (r, s) in sums.into_iter().enumerate().take(rows - i0) {
                acc[(i0 + r) * n + j] = s;
            }
        }
    }
    let mut saturated = 0;
    let out = acc
        .iter()
        .enumerate()
        .map(|(idx, &s)| {
            let (v, sat) = fmt.saturate(s + i64::from(bias[idx % n]));
            saturated += usize::from(sat);
            v
        })
        .collect();
    (out, saturated)
}

fn check_affine(x: &FixedTensor, w: &PackedShiftTensor, b: &FixedTensor) -> Result<(usize, usize, usize)> {
    if x.shape().len() != 2 || w.shape().len() != 2 {
        return shape_err(format!(
            "shift_matmul expects matrices, got {:?} and {:?}",
            x.shape(),
            w.shape()
        ));
    }
    let (m, k, n) = (x.shape()[0], x.shape()[1], w.shape()[0]);
    if w.shape()[1] != k || b.shape() != [n] {
        return shape_err(format!(
            "shift_matmul: x {:?}, w {:?}, b {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        ));
    }
    check_fmt(x, b)?;
    Ok((m, k, n))
}

fn check_fmt(x: &FixedTensor, b: &FixedTensor) -> Result<()> {
    if x.fmt() != b.fmt() {
        return Err(crate::Error::InvalidArgument(format!(
            "fixed-point formats differ: {:?} vs {:?}",
            x.fmt(),
            b.fmt()
        )));
    }
    Ok(())
}

/// `x[m×k] · Wᵀ + b` with `W[n×k]` packed, using only shifts and adds.
pub fn shift_matmul(x: &FixedTensor, w: &PackedShiftTensor, b: &FixedTensor) -> Result<KernelOutput> {
    let (m, k, n) = check_affine(x, w, b)?;
    let (out, saturated) = shift_rows(x.data(), m, k, &Decoded::new(w), b.data(), x.fmt());
    Ok(KernelOutput {
        out: FixedTensor::new(&[m, n], out, x.fmt())?,
        saturated,
    })
}

/// Reference kernel with integer multiplies: the weight `±2^-m` becomes the
/// integer `2^(31-m)` at scale `2^31`, the product is floored back by an
/// arithmetic shift of 31 and the sign is applied last.
pub fn multiply_matmul(x: &FixedTensor, w: &PackedShiftTensor, b: &FixedTensor) -> Result<KernelOutput> {
    let (m, k, n) = check_affine(x, w, b)?;
    let (mag, sign): (Vec<i64>, Vec<i64>) = w
        .codes()
        .into_iter()
        .map(|c| match decode(c) {
            None => (0, 0),
            Some((neg, e)) => (1i64 << (31 - e), if neg { -1 } else { 1 }),
        })
        .unzip();
    let mut out = Vec::with_capacity(m * n);
    let mut saturated = 0;
    for i in 0..m {
        for j in 0..n {
            let mut acc = i64::from(b.data()[j]);
            for kk in 0..k {
                let xv = i64::from(x.data()[i * k + kk]);
                acc += sign[j * k + kk] * ((xv * mag[j * k + kk]) >> 31);
            }
            let (v, sat) = x.fmt().saturate(acc);
            out.push(v);
            saturated += usize::from(sat);
        }
    }
    Ok(KernelOutput {
        out: FixedTensor::new(&[m, n], out, x.fmt())?,
        saturated,
    })
}

/// Patches of an NCHW input as rows `[N·H'·W', C·kh·kw]`, zero padded.
pub(crate) fn im2row(x: &[i32], g: &ConvGeometry) -> Vec<i32> {
    let k = g.patch_len();
    let plane = g.height * g.width;
    let mut out = vec![0i32; g.batch * g.out_pixels() * k];
    let mut rows = out.chunks_exact_mut(k);
    for n in 0..g.batch {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let row = rows.next().unwrap();
                for c in 0..g.channels {
                    let src = &x[(n * g.channels + c) * plane..][..plane];
                    for ki in 0..g.kh {
                        for kj in 0..g.kw {
                            if let Some((y, xx)) = g.source(oy, ox, ki, kj) {
                                row[(c * g.kh + ki) * g.kw + kj] = src[y * g.width + xx];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn conv_with(
    x: &FixedTensor,
    w_shape: &[usize],
    w: &Decoded,
    b: &FixedTensor,
    stride: usize,
    padding: usize,
) -> Result<KernelOutput> {
    let g = ConvGeometry::new(x.shape(), w_shape, stride, padding)?;
    if b.shape() != [g.filters] {
        return shape_err(format!("shift_conv2d bias {:?} for {} filters", b.shape(), g.filters));
    }
    check_fmt(x, b)?;
    let rows = g.batch * g.out_pixels();
    let patches = im2row(x.data(), &g);
    let (y, saturated) = shift_rows(&patches, rows, g.patch_len(), w, b.data(), x.fmt());
    // [N·P, F] -> [N, F, P]
    let (f, p) = (g.filters, g.out_pixels());
    let mut out = vec![0i32; y.len()];
    for n in 0..g.batch {
        for px in 0..p {
            for ch in 0..f {
                out[(n * f + ch) * p + px] = y[(n * p + px) * f + ch];
            }
        }
    }
    Ok(KernelOutput {
        out: FixedTensor::new(&g.output_shape(), out, x.fmt())?,
        saturated,
    })
}

/// Cross-correlation of `x[N,C,H,W]` with packed `w[F,C,kh,kw]` plus a
/// per-filter bias, using only shifts and adds.
pub fn shift_conv2d(
    x: &FixedTensor,
    w: &PackedShiftTensor,
    b: &FixedTensor,
    stride: usize,
    padding: usize,
) -> Result<KernelOutput> {
    conv_with(x, w.shape(), &Decoded::new(w), b, stride, padding)
}
