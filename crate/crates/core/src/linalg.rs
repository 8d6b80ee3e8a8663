//! Matrix multiply, 2-D convolution and pooling kernels.
//!
//! Every reduction accumulates from zero in ascending index order along the
//! reduction axis, so results are bit-identical to the obvious nested-loop
//! formulations. Blocking only reorders work *across* output elements.

use crate::error::{shape_err, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

const MR: usize = 4;
const NR: usize = 16;

/// Reduction-axis block length. Partial sums are carried through `c`
/// between blocks, so the order of additions is unchanged.
const KC: usize = 256;

/// Strided view of a matrix: element `(i, j)` lives at `i·row + j·col`.
#[derive(Debug, Clone, Copy)]
pub struct Layout {
    pub row: usize,
    pub col: usize,
}

impl Layout {
    /// Row-major with `cols` columns.
    pub fn row_major(cols: usize) -> Self {
        Self { row: cols, col: 1 }
    }

    /// Transpose of a row-major matrix with `cols` columns.
    pub fn transposed(cols: usize) -> Self {
        Self { row: 1, col: cols }
    }
}

/// `c[m×n] = a[m×k] · b[k×n]`, all row-major. `c` is overwritten.
pub fn gemm<T: Real>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    gemm_strided(m, n, k, a, Layout::row_major(k), b, Layout::row_major(n), c);
}

/// `c[m×n] = a · b` for strided `a` (m×k) and `b` (k×n); `c` is row-major
/// and overwritten.
#[allow(clippy::too_many_arguments)]
pub fn gemm_strided<T: Real>(m: usize, n: usize, k: usize, a: &[T], la: Layout, b: &[T], lb: Layout, c: &mut [T]) {
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v = T::zero());
        return;
    }
    let m_panels = m.div_ceil(MR);
    let mut apack = vec![T::zero(); m_panels * MR * KC.min(k)];
    let mut bpack = vec![T::zero(); NR * KC.min(k)];
    for k0 in (0..k).step_by(KC) {
        let kc = KC.min(k - k0);
        // A block packed into MR-row panels laid out k-major: panel[p][kk*MR + r].
        for p in 0..m_panels {
            let dst = &mut apack[p * MR * kc..(p + 1) * MR * kc];
            for r in 0..MR {
                let i = p * MR + r;
                if i >= m {
                    for kk in 0..kc {
                        dst[kk * MR + r] = T::zero();
                    }
                    continue;
                }
                for kk in 0..kc {
                    dst[kk * MR + r] = a[i * la.row + (k0 + kk) * la.col];
                }
            }
        }
        for j0 in (0..n).step_by(NR) {
            let w = NR.min(n - j0);
            for kk in 0..kc {
                let dst = &mut bpack[kk * NR..kk * NR + NR];
                let base = (k0 + kk) * lb.row + j0 * lb.col;
                if lb.col == 1 {
                    dst[..w].copy_from_slice(&b[base..base + w]);
                } else {
                    for (j, d) in dst[..w].iter_mut().enumerate() {
                        *d = b[base + j * lb.col];
                    }
                }
                dst[w..].iter_mut().for_each(|v| *v = T::zero());
            }
            for p in 0..m_panels {
                let rows = MR.min(m - p * MR);
                let mut acc = [[T::zero(); NR]; MR];
                if k0 > 0 {
                    for (r, acc_row) in acc.iter_mut().enumerate().take(rows) {
                        let i = p * MR + r;
                        acc_row[..w].copy_from_slice(&c[i * n + j0..i * n + j0 + w]);
                    }
                }
                micro_kernel(&apack[p * MR * kc..(p + 1) * MR * kc], &bpack[..NR * kc], kc, &mut acc);
                for (r, acc_row) in acc.iter().enumerate().take(rows) {
                    let i = p * MR + r;
                    c[i * n + j0..i * n + j0 + w].copy_from_slice(&acc_row[..w]);
                }
            }
        }
    }
}

#[inline(always)]
fn micro_kernel<T: Real>(apanel: &[T], bpanel: &[T], k: usize, acc: &mut [[T; NR]; MR]) {
    for kk in 0..k {
        let av: &[T; MR] = apanel[kk * MR..kk * MR + MR].try_into().unwrap();
        let bv: &[T; NR] = bpanel[kk * NR..kk * NR + NR].try_into().unwrap();
        for r in 0..MR {
            for j in 0..NR {
                acc[r][j] = acc[r][j] + av[r] * bv[j];
            }
        }
    }
}

/// Matrix product of two rank-2 tensors.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0) {
        return shape_err(format!("matmul {:?} x {:?}", a.shape(), b.shape()));
    }
    let (m, k, n) = (a.dim(0), a.dim(1), b.dim(1));
    let mut out = vec![T::zero(); m * n];
    gemm(m, n, k, a.data(), b.data(), &mut out);
    Tensor::new(&[m, n], out)
}

/// `a · bᵀ`.
pub fn matmul_nt<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1) {
        return shape_err(format!("matmul_nt {:?} x {:?}ᵀ", a.shape(), b.shape()));
    }
    let (m, k, n) = (a.dim(0), a.dim(1), b.dim(0));
    let mut out = vec![T::zero(); m * n];
    gemm_strided(
        m,
        n,
        k,
        a.data(),
        Layout::row_major(k),
        b.data(),
        Layout::transposed(k),
        &mut out,
    );
    Tensor::new(&[m, n], out)
}

/// `aᵀ · b`.
pub fn matmul_tn<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0) {
        return shape_err(format!("matmul_tn {:?}ᵀ x {:?}", a.shape(), b.shape()));
    }
    let (k, m, n) = (a.dim(0), a.dim(1), b.dim(1));
    let mut out = vec![T::zero(); m * n];
    gemm_strided(
        m,
        n,
        k,
        a.data(),
        Layout::transposed(m),
        b.data(),
        Layout::row_major(n),
        &mut out,
    );
    Tensor::new(&[m, n], out)
}

/// Geometry of a 2-D convolution over an NCHW input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(x_shape: &[usize], w_shape: &[usize], stride: usize, padding: usize) -> Result<Self> {
        if x_shape.len() != 4 || w_shape.len() != 4 {
            return shape_err(format!(
                "conv2d expects NCHW input and FCkk kernel, got {x_shape:?}, {w_shape:?}"
            ));
        }
        let [n, c, h, w] = [x_shape[0], x_shape[1], x_shape[2], x_shape[3]];
        let [f, wc, kh, kw] = [w_shape[0], w_shape[1], w_shape[2], w_shape[3]];
        if wc != c {
            return shape_err(format!("conv2d channel mismatch: input {c}, kernel {wc}"));
        }
        if stride == 0 {
            return shape_err("conv2d stride must be positive");
        }
        let (ph, pw) = (h + 2 * padding, w + 2 * padding);
        if kh > ph || kw > pw || kh == 0 || kw == 0 {
            return shape_err(format!("kernel {kh}x{kw} does not fit padded input {ph}x{pw}"));
        }
        if (ph - kh) % stride != 0 || (pw - kw) % stride != 0 {
            return shape_err(format!(
                "non-integral output size for input {h}x{w}, kernel {kh}x{kw}, stride {stride}, padding {padding}"
            ));
        }
        Ok(Self {
            batch: n,
            channels: c,
            height: h,
            width: w,
            filters: f,
            kh,
            kw,
            stride,
            padding,
            out_h: (ph - kh) / stride + 1,
            out_w: (pw - kw) / stride + 1,
        })
    }

    /// Patch length `C·kh·kw`, the reduction length of each output.
    pub fn patch_len(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn out_pixels(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.batch, self.filters, self.out_h, self.out_w]
    }

    /// Input coordinate for output `(oy, ox)` and kernel tap `(ki, kj)`,
    /// or `None` inside the zero padding.
    #[inline]
    pub fn source(&self, oy: usize, ox: usize, ki: usize, kj: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + ki).checked_sub(self.padding)?;
        let x = (ox * self.stride + kj).checked_sub(self.padding)?;
        (y < self.height && x < self.width).then_some((y, x))
    }
}

/// Unrolls a whole batch into a `[C·kh·kw, N·H'·W']` column matrix.
/// Row order is `(c, ki, kj)`, column order `(n, oy, ox)`.
pub fn im2col<T: Copy + Default>(x: &[T], g: &ConvGeometry) -> Vec<T> {
    let cols = g.batch * g.out_pixels();
    let mut out = vec![T::default(); g.patch_len() * cols];
    let plane = g.height * g.width;
    for c in 0..g.channels {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut out[row * cols..(row + 1) * cols];
                for n in 0..g.batch {
                    let src = &x[(n * g.channels + c) * plane..(n * g.channels + c + 1) * plane];
                    for oy in 0..g.out_h {
                        for ox in 0..g.out_w {
                            if let Some((y, xx)) = g.source(oy, ox, ki, kj) {
                                dst[(n * g.out_h + oy) * g.out_w + ox] = src[y * g.width + xx];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatters-adds columns back into an NCHW buffer.
pub fn col2im<T: Real>(cols: &[T], g: &ConvGeometry) -> Vec<T> {
    let ncols = g.batch * g.out_pixels();
    let plane = g.height * g.width;
    let mut out = vec![T::zero(); g.batch * g.channels * plane];
    for c in 0..g.channels {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for n in 0..g.batch {
                    let dst = &mut out[(n * g.channels + c) * plane..(n * g.channels + c + 1) * plane];
                    for oy in 0..g.out_h {
                        for ox in 0..g.out_w {
                            if let Some((y, xx)) = g.source(oy, ox, ki, kj) {
                                dst[y * g.width + xx] += src[(n * g.out_h + oy) * g.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Reorders `[F, N·P]` into NCHW `[N, F, P]`.
fn fnp_to_nfp<T: Copy>(src: &[T], f: usize, n: usize, p: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(src.len());
    for b in 0..n {
        for ch in 0..f {
            out.extend_from_slice(&src[(ch * n + b) * p..(ch * n + b + 1) * p]);
        }
    }
    out
}

fn nfp_to_fnp<T: Copy>(src: &[T], f: usize, n: usize, p: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(src.len());
    for ch in 0..f {
        for b in 0..n {
            out.extend_from_slice(&src[(b * f + ch) * p..(b * f + ch + 1) * p]);
        }
    }
    out
}

/// Cross-correlation of `x[N,C,H,W]` with `w[F,C,kh,kw]`, zero padding,
/// no bias.
pub fn conv2d<T: Real>(x: &Tensor<T>, w: &Tensor<T>, stride: usize, padding: usize) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(x.shape(), w.shape(), stride, padding)?;
    let cols = im2col(x.data(), &g);
    let ncols = g.batch * g.out_pixels();
    let mut y = vec![T::zero(); g.filters * ncols];
    gemm(g.filters, ncols, g.patch_len(), w.data(), &cols, &mut y);
    Tensor::new(&g.output_shape(), fnp_to_nfp(&y, g.filters, g.batch, g.out_pixels()))
}

/// Gradients of [`conv2d`] with respect to its input and kernel.
/// Either side can be skipped.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    upstream: &Tensor<T>,
    stride: usize,
    padding: usize,
    need_input: bool,
    need_weight: bool,
) -> Result<(Option<Tensor<T>>, Option<Tensor<T>>)> {
    let g = ConvGeometry::new(x.shape(), w.shape(), stride, padding)?;
    if upstream.shape() != g.output_shape() {
        return shape_err(format!(
            "conv2d upstream {:?}, expected {:?}",
            upstream.shape(),
            g.output_shape()
        ));
    }
    let ncols = g.batch * g.out_pixels();
    let k = g.patch_len();
    let gy = nfp_to_fnp(upstream.data(), g.filters, g.batch, g.out_pixels());
    let grad_x = if need_input {
        let mut gcols = vec![T::zero(); k * ncols];
        gemm_strided(
            k,
            ncols,
            g.filters,
            w.data(),
            Layout::transposed(k),
            &gy,
            Layout::row_major(ncols),
            &mut gcols,
        );
        Some(Tensor::new(x.shape(), col2im(&gcols, &g))?)
    } else {
        None
    };
    let grad_w = if need_weight {
        let cols = im2col(x.data(), &g);
        let mut gw = vec![T::zero(); g.filters * k];
        gemm_strided(
            g.filters,
            k,
            ncols,
            &gy,
            Layout::row_major(ncols),
            &cols,
            Layout::transposed(ncols),
            &mut gw,
        );
        Some(Tensor::new(w.shape(), gw)?)
    } else {
        None
    };
    Ok((grad_x, grad_w))
}

/// Max pooling with square window and equal stride. Returns the output and,
/// for each output element, the flat input index that produced it (first
/// maximum in window scan order).
pub fn maxpool2d<T: Real>(x: &Tensor<T>, window: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    if x.rank() != 4 || window == 0 {
        return shape_err(format!("maxpool2d on {:?}", x.shape()));
    }
    let [n, c, h, w] = [x.dim(0), x.dim(1), x.dim(2), x.dim(3)];
    if h % window != 0 || w % window != 0 {
        return shape_err(format!("maxpool2d window {window} does not tile {h}x{w}"));
    }
    let (oh, ow) = (h / window, w / window);
    let data = x.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut idx = Vec::with_capacity(out.capacity());
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * window * w + ox * window;
                for dy in 0..window {
                    for dx in 0..window {
                        let i = base + (oy * window + dy) * w + ox * window + dx;
                        if data[i] > data[best] {
                            best = i;
                        }
                    }
                }
                out.push(data[best]);
                idx.push(best);
            }
        }
    }
    Ok((Tensor::new(&[n, c, oh, ow], out)?, idx))
}
