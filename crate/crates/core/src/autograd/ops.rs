//! Standard differentiable operations.

use super::{Backward, BackwardCtx, Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::linalg::{conv2d, conv2d_backward, matmul, matmul_nt, matmul_tn, maxpool2d};
use crate::rng::Rng;
use crate::scalar::Real;
use crate::tensor::Tensor;

type Grads<T> = Result<Vec<Option<Tensor<T>>>>;

fn when<T>(need: bool, f: impl FnOnce() -> Result<Tensor<T>>) -> Result<Option<Tensor<T>>> {
    if need {
        f().map(Some)
    } else {
        Ok(None)
    }
}

struct AddOp;
impl<T: Real> Backward<T> for AddOp {
    fn backward(&self, c: &BackwardCtx<'_, T>) -> Grads<T> {
        Ok(vec![
            when(c.needs[0], || c.upstream.sum_to_shape(c.inputs[0].shape()))?,
            when(c.needs[1], || c.upstream.sum_to_shape(c.inputs[1].shape()))?,
        ])
    }
    fn name(&self) -> &'static str {
        "add"
    }
}

struct SubOp;
impl<T: Real> Backward<T> for SubOp {
    fn backward(&self, c: &BackwardCtx<'_, T>) -> Grads<T> {
        Ok(vec![
            when(c.needs[0], || c.upstream.sum_to_shape(c.inputs[0].shape()))?,
            when(c.needs[1], || {
                Ok(c.upstream.sum_to_shape(c.inputs[1].shape())?.scale(-T::one()))
            })?,
        ])
    }
    fn name(&self) -> &'static str {
        "sub"
    }
}

struct MulOp;
impl<T: Real> Backward<T> for MulOp {
    fn backward(&self, c: &BackwardCtx<'_, T>) -> Grads<T> {
        let (a, b) = (c.inputs[0], c.inputs[1]);
        Ok(vec![
            when(c.needs[0], || c.upstream.mul(b)?.sum_to_shape(a.shape()))?,
            when(c.needs[1], || c.upstream.mul(a)?.sum_to_shape(b.shape()))?,
        ])
    }
    fn name(&self) -> &'static str {
        "mul"
    }
}

struct ScaleOp<T>(T);
impl<T: Real> Backward<T> for ScaleOp<T> {
    fn backward(&self, c: &BackwardCtx<'_, T>) -> Grads<T> {
        Ok(vec![Some(c.upstream.scale(self.0))])
    }
    fn name(&self) -> &'static str {
        "scale"
    }
}

struct SumOp;
impl<T: Real> Backward<T> for SumOp {
    fn backward(&self, c: &BackwardCtx<'_, T>) -> Grads<T> {
        let g = c.upstream.item()?;
        Ok(vec![Some(Tensor::full(c.inputs[0].shape(), g))])
    }
    fn name(&self) -> &'static str {
        "sum"
    }
}

struct SquareOp;
impl<T: Real> Backward<T> for SquareOp {
    fn backward(&self, c: &BackwardCtx<'_, T>) -> Grads<T> {
        let two = T::of(2.0);
        Ok(vec![Some(c.upstream.zip_map(c.inputs[0], |g, x| g * two * x)?)])
    }
    fn name(&self) -> &'static str {
        "square"
    }
}

struct Exp2Op;
impl<T: Real> Backward<T> for Exp2Op {
    fn backward(&self, c: &BackwardCtx<'_, T>) -> Grads<T> {
        let ln2 = T::LN_2();
        Ok(vec![Some(c.upstream.zip_map(c.output, |g, y| g * y * ln2)?)])
    }
    fn name(&self) -> &'static str {
        "exp2"
    }
}

struct ReshapeOp;
impl<T: Real> Backward<T> for ReshapeOp {
    fn backward(&self, c: &BackwardCtx<'_, T>) -> Grads<T> {
        Ok(vec![Some(c.upstream.reshape(c.inputs[0].shape())?)])
    }
    fn name(&self) -> &'static str {
        "reshape"
    }
}

struct MatmulOp;
impl<T: Real> Backward<T> for MatmulOp {
    fn backward(&self, c: &BackwardCtx<'_, T>) -> Grads<T> {
        let (a, b) = (c.inputs[0], c.inputs[1]);
        Ok(vec![
            when(c.needs[0], || matmul_nt(c.upstream, b))?,
            when(c.needs[1], || matmul_tn(a, c.upstream))?,
        ])
    }
    fn name(&self) -> &'static str {
        "matmul"
    }
}

/// `a · bᵀ`, the product used by linear layers with `[out, in]` weights.
struct MatmulNtOp;
impl<T: Real> Backward<T> for MatmulNtOp {
    fn backward(&self, c: &BackwardCtx<'_, T>) -> Grads<T> {
        let (a, b) = (c.inputs[0], c.inputs[1]);
        Ok(vec![
            when(c.needs[0], || matmul(c.upstream, b))?,
            when(c.needs[1], || matmul_tn(c.upstream, a))?,
        ])
    }
    fn name(&self) -> &'static str {
        "matmul_nt"
    }
}

struct Conv2dOp {
    stride: usize,
    padding: usize,
}
impl<T: Real> Backward<T> for Conv2dOp {
    fn backward(&self, c: &BackwardCtx<'_, T>) -> Grads<T> {
        let (gx, gw) = conv2d_backward(
            c.inputs[0],
            c.inputs[1],
            c.upstream,
            self.stride,
            self.padding,
            c.needs[0],
            c.needs[1],
        )?;
        Ok(vec![gx, gw])
    }
    fn name(&self) -> &'static str {
        "conv2d"
    }
}

struct ReluOp;
impl<T: Real> Backward<T> for ReluOp {
    fn backward(&self, c: &BackwardCtx<'_, T>) -> Grads<T> {
        // Subgradient 0 at the kink.
        Ok(vec![Some(c.upstream.zip_map(c.inputs[0], |g, x| {
            if x > T::zero() {
                g
            } else {
                T::zero()
            }
        })?)])
    }
    fn name(&self) -> &'static str {
        "relu"
    }
}

struct MaxPoolOp {
    argmax: Vec<usize>,
}
impl<T: Real> Backward<T> for MaxPoolOp {
    fn backward(&self, c: &BackwardCtx<'_, T>) -> Grads<T> {
        let mut gx = Tensor::zeros(c.inputs[0].shape());
        let d = gx.data_mut();
        for (&i, &g) in self.argmax.iter().zip(c.upstream.data()) {
            d[i] += g;
        }
        Ok(vec![Some(gx)])
    }
    fn name(&self) -> &'static str {
        "maxpool2d"
    }
}

struct MaskOp<T> {
    mask: Tensor<T>,
}
impl<T: Real> Backward<T> for MaskOp<T> {
    fn backward(&self, c: &BackwardCtx<'_, T>) -> Grads<T> {
        Ok(vec![Some(c.upstream.zip_map(&self.mask, |g, m| g * m)?)])
    }
    fn name(&self) -> &'static str {
        "dropout"
    }
}

struct SoftmaxCeOp<T> {
    probs: Tensor<T>,
    labels: Vec<usize>,
}
impl<T: Real> Backward<T> for SoftmaxCeOp<T> {
    fn backward(&self, c: &BackwardCtx<'_, T>) -> Grads<T> {
        let batch = self.labels.len();
        let classes = self.probs.dim(1);
        let k = c.upstream.item()? / T::of(batch as f64);
        let mut g = self.probs.clone();
        let d = g.data_mut();
        for (row, &label) in self.labels.iter().enumerate() {
            d[row * classes + label] -= T::one();
        }
        d.iter_mut().for_each(|v| *v *= k);
        Ok(vec![Some(g)])
    }
    fn name(&self) -> &'static str {
        "softmax_cross_entropy"
    }
}

/// Row-wise softmax of a `[B, C]` tensor, computed with max subtraction.
pub fn softmax_rows<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    if logits.rank() != 2 {
        return shape_err(format!("softmax on {:?}", logits.shape()));
    }
    let cols = logits.dim(1);
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(cols) {
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
    Ok(out)
}

impl<T: Real> Tape<T> {
    fn unary(&mut self, a: Var, value: Tensor<T>, op: impl Backward<T> + 'static) -> Var {
        self.custom(&[a], value, Box::new(op))
    }

    fn binary(&mut self, a: Var, b: Var, value: Tensor<T>, op: impl Backward<T> + 'static) -> Var {
        self.custom(&[a, b], value, Box::new(op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.binary(a, b, v, AddOp))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.binary(a, b, v, SubOp))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).mul(self.value(b))?;
        Ok(self.binary(a, b, v, MulOp))
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        let v = self.value(a).scale(k);
        self.unary(a, v, ScaleOp(k))
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.unary(a, v, SumOp)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.unary(a, v, SquareOp)
    }

    pub fn exp2(&mut self, a: Var) -> Var {
        let v = self.value(a).exp2();
        self.unary(a, v, Exp2Op)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).reshape(shape)?;
        Ok(self.unary(a, v, ReshapeOp))
    }

    /// Flattens `[N, ...]` to `[N, rest]`.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let shape = self.value(a).shape();
        let n = shape.first().copied().unwrap_or(1);
        let rest: usize = shape.iter().skip(1).product();
        self.reshape(a, &[n, rest])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = matmul(self.value(a), self.value(b))?;
        Ok(self.binary(a, b, v, MatmulOp))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = matmul_nt(self.value(a), self.value(b))?;
        Ok(self.binary(a, b, v, MatmulNtOp))
    }

    /// `y = x·Wᵀ + b` for `x[B,in]`, `W[out,in]`, `b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (ws, bs) = (self.value(w).shape(), self.value(b).shape());
        if ws.len() != 2 || bs != [ws[0]] {
            return shape_err(format!("linear weight {ws:?} with bias {bs:?}"));
        }
        let y = self.matmul_nt(x, w)?;
        self.add(y, b)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var> {
        let v = conv2d(self.value(x), self.value(w), stride, padding)?;
        Ok(self.binary(x, w, v, Conv2dOp { stride, padding }))
    }

    /// Convolution plus per-filter bias `b[F]`.
    pub fn conv2d_bias(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let f = self.value(w).shape().first().copied().unwrap_or(0);
        if self.value(b).shape() != [f] {
            return shape_err(format!("conv bias {:?} for {f} filters", self.value(b).shape()));
        }
        let y = self.conv2d(x, w, stride, padding)?;
        let b3 = self.reshape(b, &[f, 1, 1])?;
        self.add(y, b3)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).relu();
        self.unary(a, v, ReluOp)
    }

    pub fn maxpool2d(&mut self, a: Var, window: usize) -> Result<Var> {
        let (v, argmax) = maxpool2d(self.value(a), window)?;
        Ok(self.unary(a, v, MaxPoolOp { argmax }))
    }

    /// Inverted dropout: survivors are scaled by `1/(1-p)` in training;
    /// identity when `train` is false.
    pub fn dropout(&mut self, a: Var, p: f64, train: bool, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("dropout probability {p} not in [0, 1)")));
        }
        if !train || p == 0.0 {
            return Ok(a);
        }
        let keep = T::of(1.0 / (1.0 - p));
        let mask = Tensor::from_fn(self.value(a).shape(), |_| if rng.unit() < p { T::zero() } else { keep });
        let v = self.value(a).zip_map(&mask, |x, m| x * m)?;
        Ok(self.unary(a, v, MaskOp { mask }))
    }

    /// Mean softmax cross-entropy of `logits[B, C]` against class labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let l = self.value(logits);
        if l.rank() != 2 || l.dim(0) != labels.len() {
            return shape_err(format!("cross-entropy on {:?} with {} labels", l.shape(), labels.len()));
        }
        let classes = l.dim(1);
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Domain(format!("label {bad} out of range for {classes} classes")));
        }
        let probs = softmax_rows(l)?;
        let mut loss = T::zero();
        for (row, &y) in labels.iter().enumerate() {
            let logits_row = &l.data()[row * classes..(row + 1) * classes];
            let m = logits_row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let lse = logits_row.iter().map(|&v| (v - m).exp()).sum::<T>().ln() + m;
            loss += lse - logits_row[y];
        }
        let v = Tensor::scalar(loss / T::of(labels.len() as f64));
        Ok(self.unary(
            logits,
            v,
            SoftmaxCeOp {
                probs,
                labels: labels.to_vec(),
            },
        ))
    }
}
