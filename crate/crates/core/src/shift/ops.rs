//! LinearShift and ConvShift as differentiable tape operations.
//!
//! Forward: inputs and bias are rounded to the fixed-point grid, the weight
//! is quantized to `S̃·2^P̃`, and the ordinary linear/conv is evaluated with
//! that materialized weight. Backward uses straight-through estimators:
//!
//! * input gradient flows through the quantized weight;
//! * DeepShift-Q: `∂C/∂W = G`, the ordinary weight gradient `G` evaluated
//!   at the quantized weight;
//! * DeepShift-PS: `∂C/∂P = G ⊙ W̃ · ln 2` and `∂C/∂S = G`.

use crate::autograd::{Backward, BackwardCtx, Tape, Var};
use crate::error::{shape_err, Result};
use crate::linalg::{conv2d, conv2d_backward, matmul, matmul_nt, matmul_tn};
use crate::scalar::Real;
use crate::tensor::Tensor;

use super::fixed::FixedPointFormat;
use super::weight::{quantize_ps, quantize_q, ShiftWeight};

/// Which product a shift layer computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftKind {
    /// `y = x·Wᵀ + b`, `W[out, in]`.
    Linear,
    /// Cross-correlation with `W[F, C, kh, kw]` and per-filter bias.
    Conv { stride: usize, padding: usize },
}

/// Trainable weight parameterisation of a shift layer, as tape variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftVars {
    /// DeepShift-Q: full-precision `W`.
    Q { weight: Var },
    /// DeepShift-PS: real-valued shift `P` and sign `S`.
    Ps { shift: Var, sign: Var },
}

impl ShiftKind {
    /// Product without bias.
    pub fn apply<T: Real>(&self, x: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
        match *self {
            Self::Linear => matmul_nt(x, w),
            Self::Conv { stride, padding } => conv2d(x, w, stride, padding),
        }
    }

    /// Adds the bias with the same broadcast the standard layers use.
    pub fn add_bias<T: Real>(&self, y: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Self::Linear => y.add(b),
            Self::Conv { .. } => y.add(&b.reshape(&[b.numel(), 1, 1])?),
        }
    }

    fn grads<T: Real>(
        &self,
        x: &Tensor<T>,
        w: &Tensor<T>,
        upstream: &Tensor<T>,
        need_x: bool,
        need_w: bool,
    ) -> Result<(Option<Tensor<T>>, Option<Tensor<T>>)> {
        match *self {
            Self::Linear => Ok((
                if need_x { Some(matmul(upstream, w)?) } else { None },
                if need_w { Some(matmul_tn(upstream, x)?) } else { None },
            )),
            Self::Conv { stride, padding } => conv2d_backward(x, w, upstream, stride, padding, need_x, need_w),
        }
    }

    fn bias_grad<T: Real>(&self, upstream: &Tensor<T>, bias_shape: &[usize]) -> Result<Tensor<T>> {
        match self {
            Self::Linear => upstream.sum_to_shape(bias_shape),
            Self::Conv { .. } => upstream.sum_to_shape(&[bias_shape[0], 1, 1])?.reshape(bias_shape),
        }
    }
}

/// Quantizes the current parameter values of a shift layer.
pub fn quantize_vars<T: Real>(tape: &Tape<T>, vars: &ShiftVars) -> Result<ShiftWeight> {
    match *vars {
        ShiftVars::Q { weight } => Ok(quantize_q(tape.value(weight))),
        ShiftVars::Ps { shift, sign } => quantize_ps(tape.value(shift), tape.value(sign)),
    }
}

struct ShiftBackward<T> {
    kind: ShiftKind,
    ps: bool,
    x_fixed: Tensor<T>,
    w_tilde: Tensor<T>,
}

impl<T: Real> Backward<T> for ShiftBackward<T> {
    fn backward(&self, c: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let n = c.inputs.len();
        let need_weight = c.needs[1..n - 1].iter().any(|&b| b);
        let (gx, gw) = self
            .kind
            .grads(&self.x_fixed, &self.w_tilde, c.upstream, c.needs[0], need_weight)?;
        let gb = if c.needs[n - 1] {
            Some(self.kind.bias_grad(c.upstream, c.inputs[n - 1].shape())?)
        } else {
            None
        };
        if self.ps {
            let ln2 = T::LN_2();
            let gp = match &gw {
                Some(g) if c.needs[1] => Some(g.zip_map(&self.w_tilde, |g, w| g * w * ln2)?),
                _ => None,
            };
            let gs = if c.needs[2] { gw } else { None };
            Ok(vec![gx, gp, gs, gb])
        } else {
            Ok(vec![gx, gw, gb])
        }
    }

    fn name(&self) -> &'static str {
        if self.ps {
            "shift_ps"
        } else {
            "shift_q"
        }
    }
}

fn check_bias<T: Real>(kind: ShiftKind, w_shape: &[usize], b: &Tensor<T>) -> Result<()> {
    let expected_rank = match kind {
        ShiftKind::Linear => 2,
        ShiftKind::Conv { .. } => 4,
    };
    if w_shape.len() != expected_rank || b.shape() != [w_shape[0]] {
        return shape_err(format!("shift layer weight {w_shape:?} with bias {:?}", b.shape()));
    }
    Ok(())
}

impl<T: Real> Tape<T> {
    /// Shift layer forward (linear or conv), Q or PS parameterisation.
    pub fn shift_layer(
        &mut self,
        kind: ShiftKind,
        x: Var,
        vars: ShiftVars,
        b: Var,
        fmt: &FixedPointFormat,
    ) -> Result<Var> {
        let sw = quantize_vars(self, &vars)?;
        check_bias(kind, sw.shape(), self.value(b))?;
        let w_tilde: Tensor<T> = sw.materialize();
        let x_fixed = fmt.round_tensor(self.value(x));
        let b_fixed = fmt.round_tensor(self.value(b));
        let y = kind.add_bias(&kind.apply(&x_fixed, &w_tilde)?, &b_fixed)?;
        let (inputs, ps) = match vars {
            ShiftVars::Q { weight } => (vec![x, weight, b], false),
            ShiftVars::Ps { shift, sign } => (vec![x, shift, sign, b], true),
        };
        Ok(self.custom(
            &inputs,
            y,
            Box::new(ShiftBackward {
                kind,
                ps,
                x_fixed,
                w_tilde,
            }),
        ))
    }

    /// LinearShift: `y = x_fx · W̃ᵀ + b_fx`.
    pub fn linear_shift(&mut self, x: Var, vars: ShiftVars, b: Var, fmt: &FixedPointFormat) -> Result<Var> {
        self.shift_layer(ShiftKind::Linear, x, vars, b, fmt)
    }

    /// ConvShift: `y = W̃ ⊛ x_fx + b_fx`.
    pub fn conv_shift(
        &mut self,
        x: Var,
        vars: ShiftVars,
        b: Var,
        stride: usize,
        padding: usize,
        fmt: &FixedPointFormat,
    ) -> Result<Var> {
        self.shift_layer(ShiftKind::Conv { stride, padding }, x, vars, b, fmt)
    }

    /// Continuous relaxation of a PS layer: `W = S·2^P` with rounding and
    /// sign replaced by the identity, no fixed-point emulation. Fully
    /// differentiable; used as a gradient-check oracle for the STE rules.
    pub fn relaxed_shift_layer(&mut self, kind: ShiftKind, x: Var, shift: Var, sign: Var, b: Var) -> Result<Var> {
        let w = self.relaxed_weight(shift, sign)?;
        match kind {
            ShiftKind::Linear => self.linear(x, w, b),
            ShiftKind::Conv { stride, padding } => self.conv2d_bias(x, w, b, stride, padding),
        }
    }

    /// `S · 2^P` on the tape.
    pub fn relaxed_weight(&mut self, shift: Var, sign: Var) -> Result<Var> {
        let mag = self.exp2(shift);
        self.mul(sign, mag)
    }
}
