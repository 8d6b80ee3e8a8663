use crate::error::{Error, Result};
use crate::nn::{Affine, Arch, Layer, Model};
use crate::scalar::Real;
use crate::shift::{FixedPointFormat, ShiftKind};
use crate::tensor::Tensor;

use super::fixed::FixedTensor;
use super::ops::{conv_with, shift_rows, Decoded, KernelOutput};
use super::packed::{PackReport, PackedShiftTensor};

/// Shift layer ready for integer inference.
#[derive(Debug, Clone)]
pub struct ShiftLayer {
    pub name: String,
    pub kind: ShiftKind,
    pub weight: PackedShiftTensor,
    pub bias: FixedTensor,
    decoded: Decoded,
}

impl ShiftLayer {
    pub fn new(name: &str, kind: ShiftKind, weight: PackedShiftTensor, bias: FixedTensor) -> Result<Self> {
        let rank = match kind {
            ShiftKind::Linear => 2,
            ShiftKind::Conv { .. } => 4,
        };
        if weight.shape().len() != rank || bias.shape() != [weight.shape()[0]] {
            return Err(Error::Shape(format!(
                "{name}: weight {:?} with bias {:?}",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Self {
            name: name.to_string(),
            kind,
            decoded: Decoded::new(&weight),
            weight,
            bias,
        })
    }

    pub fn forward(&self, x: &FixedTensor) -> Result<KernelOutput> {
        match self.kind {
            ShiftKind::Linear => {
                let k = self.weight.shape()[1];
                if x.shape().len() != 2 || x.shape()[1] != k {
                    return Err(Error::Shape(format!(
                        "{}: input {:?}, expected [_, {k}]",
                        self.name,
                        x.shape()
                    )));
                }
                if x.fmt() != self.bias.fmt() {
                    return Err(Error::InvalidArgument(format!(
                        "{}: fixed-point format mismatch",
                        self.name
                    )));
                }
                let rows = x.shape()[0];
                let (out, saturated) = shift_rows(x.data(), rows, k, &self.decoded, self.bias.data(), x.fmt());
                Ok(KernelOutput {
                    out: FixedTensor::new(&[rows, self.weight.shape()[0]], out, x.fmt())?,
                    saturated,
                })
            }
            ShiftKind::Conv { stride, padding } => {
                conv_with(x, self.weight.shape(), &self.decoded, &self.bias, stride, padding)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum IntLayer {
    Shift(ShiftLayer),
    Relu,
    MaxPool2d(usize),
    Flatten,
}

/// Whole network on integer codes; dropout is dropped (inference only).
#[derive(Debug, Clone)]
pub struct IntegerNetwork {
    arch: Arch,
    fmt: FixedPointFormat,
    layers: Vec<IntLayer>,
}

/// Per-batch outputs of [`IntegerNetwork::forward`].
#[derive(Debug, Clone)]
pub struct IntForward {
    pub logits: FixedTensor,
    pub saturated: usize,
}

impl IntegerNetwork {
    /// Follows the layer sequence of `layers`, asking `shift` for the
    /// integer form of each affine layer.
    pub fn assemble<T: Real>(
        arch: Arch,
        fmt: FixedPointFormat,
        layers: &[Layer<T>],
        mut shift: impl FnMut(&Affine<T>) -> Result<ShiftLayer>,
    ) -> Result<Self> {
        let mut out = Vec::new();
        for l in layers {
            match l {
                Layer::Affine(a) => out.push(IntLayer::Shift(shift(a)?)),
                Layer::Relu => out.push(IntLayer::Relu),
                Layer::MaxPool2d(k) => out.push(IntLayer::MaxPool2d(*k)),
                Layer::Flatten => out.push(IntLayer::Flatten),
                Layer::Dropout(_) => {}
            }
        }
        Ok(Self { arch, fmt, layers: out })
    }

    /// Packs every shift layer of a DeepShift model; biases are rounded to
    /// the model's fixed-point grid.
    pub fn from_model<T: Real>(model: &Model<T>) -> Result<(Self, PackReport)> {
        if !model.mode().is_shift() {
            return Err(Error::InvalidArgument(format!(
                "the shift-kernel engine needs a DeepShift model, got mode {}",
                model.mode()
            )));
        }
        let fmt = model.fixed_point();
        let mut total = PackReport::default();
        let net = Self::assemble(model.arch(), fmt, model.layers(), |a| {
            let sw = a.shift_weight()?.expect("shift mode");
            let (w, r) = PackedShiftTensor::pack(&sw);
            total.saturated += r.saturated;
            total.flushed += r.flushed;
            let b = FixedTensor::from_real(&a.bias().value(), fmt);
            ShiftLayer::new(a.name(), a.kind(), w, b)
        })?;
        Ok((net, total))
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn fixed_point(&self) -> FixedPointFormat {
        self.fmt
    }

    pub fn layers(&self) -> &[IntLayer] {
        &self.layers
    }

    pub fn shift_layers(&self) -> impl Iterator<Item = &ShiftLayer> {
        self.layers.iter().filter_map(|l| match l {
            IntLayer::Shift(s) => Some(s),
            _ => None,
        })
    }

    /// Logit codes for a batch of real-valued inputs.
    pub fn forward<T: Real>(&self, x: &Tensor<T>) -> Result<IntForward> {
        let mut h = FixedTensor::from_real(x, self.fmt);
        let mut saturated = 0;
        for l in &self.layers {
            h = match l {
                IntLayer::Shift(s) => {
                    let r = s.forward(&h)?;
                    saturated += r.saturated;
                    r.out
                }
                IntLayer::Relu => h.relu(),
                IntLayer::MaxPool2d(k) => h.maxpool2d(*k)?,
                IntLayer::Flatten => {
                    let n = h.shape()[0];
                    let rest = h.numel() / n.max(1);
                    h.reshape(&[n, rest])?
                }
            };
        }
        Ok(IntForward { logits: h, saturated })
    }

    pub fn predict<T: Real>(&self, x: &Tensor<T>) -> Result<Vec<usize>> {
        self.forward(x)?.logits.argmax_rows()
    }
}
