//! Layers and the two MNIST architectures.
//!
//! Every weighted layer is an [`Affine`] whose weight is held in one of
//! three parameterisations: full precision, DeepShift-Q (`W`) or
//! DeepShift-PS (`P`, `S`). Biases are always full precision.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autograd::{Parameter, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::{kaiming_init, Rng};
use crate::scalar::Real;
use crate::shift::{count_non_pow2, quantize_ps, quantize_q, FixedPointFormat, ShiftKind, ShiftVars, ShiftWeight};
use crate::tensor::Tensor;

/// Architecture id, stored in checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    SimpleFc,
    SimpleCnn,
}

impl Arch {
    pub fn id(self) -> &'static str {
        match self {
            Self::SimpleFc => "simple_fc",
            Self::SimpleCnn => "simple_cnn",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple_fc" => Ok(Self::SimpleFc),
            "simple_cnn" => Ok(Self::SimpleCnn),
            _ => Err(Error::InvalidArgument(format!("unknown architecture {s:?}"))),
        }
    }
}

/// How the weighted layers are parameterised and evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Original,
    DeepshiftQ,
    DeepshiftPs,
}

impl Mode {
    pub fn id(self) -> &'static str {
        match self {
            Self::Original => "original",
            Self::DeepshiftQ => "deepshift_q",
            Self::DeepshiftPs => "deepshift_ps",
        }
    }

    pub fn is_shift(self) -> bool {
        self != Self::Original
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(Self::Original),
            "deepshift_q" | "q" => Ok(Self::DeepshiftQ),
            "deepshift_ps" | "ps" => Ok(Self::DeepshiftPs),
            _ => Err(Error::InvalidArgument(format!("unknown mode {s:?}"))),
        }
    }
}

/// Uniform ranges for the PS parameters at initialisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    pub shift_range: (f64, f64),
    pub sign_range: (f64, f64),
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            shift_range: (-8.0, 0.0),
            sign_range: (-1.0, 1.0),
        }
    }
}

/// Weight of an [`Affine`] layer.
#[derive(Debug, Clone)]
pub enum Weight<T: Real = f64> {
    Full(Parameter<T>),
    Q(Parameter<T>),
    Ps { shift: Parameter<T>, sign: Parameter<T> },
}

/// Linear or convolutional layer with bias.
#[derive(Debug, Clone)]
pub struct Affine<T: Real = f64> {
    name: String,
    kind: ShiftKind,
    shape: Vec<usize>,
    weight: Weight<T>,
    bias: Parameter<T>,
}

impl<T: Real> Affine<T> {
    /// `shape` is `[out, in]` for linear and `[F, C, kh, kw]` for conv.
    pub fn new(
        name: &str,
        kind: ShiftKind,
        shape: &[usize],
        mode: Mode,
        init: &InitConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        let fan_in: usize = shape[1..].iter().product();
        let weight = match mode {
            Mode::Original => Weight::Full(Parameter::new(
                format!("{name}.weight"),
                kaiming_init(shape, fan_in, rng)?,
            )),
            Mode::DeepshiftQ => Weight::Q(Parameter::new(
                format!("{name}.weight"),
                kaiming_init(shape, fan_in, rng)?,
            )),
            Mode::DeepshiftPs => {
                let (plo, phi) = init.shift_range;
                let (slo, shi) = init.sign_range;
                if !(plo < phi && slo < shi) {
                    return Err(Error::InvalidArgument(format!("empty init range in {init:?}")));
                }
                Weight::Ps {
                    shift: Parameter::new(format!("{name}.shift"), rng.uniform_tensor(shape, plo, phi)),
                    sign: Parameter::new(format!("{name}.sign"), rng.uniform_tensor(shape, slo, shi)),
                }
            }
        };
        Ok(Self {
            name: name.to_string(),
            kind,
            shape: shape.to_vec(),
            weight,
            bias: Parameter::new(format!("{name}.bias"), Tensor::zeros(&shape[..1])),
        })
    }

    /// Layer with explicit parameters.
    pub fn from_parts(name: &str, kind: ShiftKind, weight: Weight<T>, bias: Parameter<T>) -> Result<Self> {
        let shape = match &weight {
            Weight::Full(w) | Weight::Q(w) => w.value().shape().to_vec(),
            Weight::Ps { shift, sign } => {
                if shift.value().shape() != sign.value().shape() {
                    return Err(Error::Shape(format!("{name}: shift and sign shapes differ")));
                }
                shift.value().shape().to_vec()
            }
        };
        let rank_ok = match kind {
            ShiftKind::Linear => shape.len() == 2,
            ShiftKind::Conv { .. } => shape.len() == 4,
        };
        if !rank_ok || bias.value().shape() != [shape[0]] {
            return Err(Error::Shape(format!(
                "{name}: weight {shape:?} with bias {:?}",
                bias.value().shape()
            )));
        }
        Ok(Self {
            name: name.to_string(),
            kind,
            shape,
            weight,
            bias,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> ShiftKind {
        self.kind
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn weight(&self) -> &Weight<T> {
        &self.weight
    }

    pub fn bias(&self) -> &Parameter<T> {
        &self.bias
    }

    pub fn parameters(&self) -> Vec<Parameter<T>> {
        let mut out = match &self.weight {
            Weight::Full(w) | Weight::Q(w) => vec![w.clone()],
            Weight::Ps { shift, sign } => vec![shift.clone(), sign.clone()],
        };
        out.push(self.bias.clone());
        out
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var, fmt: &FixedPointFormat, grad: bool) -> Result<Var> {
        let bind = |tape: &mut Tape<T>, p: &Parameter<T>| {
            if grad {
                tape.param(p)
            } else {
                tape.constant(p.value().clone())
            }
        };
        let b = bind(tape, &self.bias);
        let vars = match &self.weight {
            Weight::Full(w) => {
                let w = bind(tape, w);
                return match self.kind {
                    ShiftKind::Linear => tape.linear(x, w, b),
                    ShiftKind::Conv { stride, padding } => tape.conv2d_bias(x, w, b, stride, padding),
                };
            }
            Weight::Q(w) => ShiftVars::Q { weight: bind(tape, w) },
            Weight::Ps { shift, sign } => ShiftVars::Ps {
                shift: bind(tape, shift),
                sign: bind(tape, sign),
            },
        };
        tape.shift_layer(self.kind, x, vars, b, fmt)
    }

    /// Quantized weight of a shift layer; `None` for full precision.
    pub fn shift_weight(&self) -> Result<Option<ShiftWeight>> {
        match &self.weight {
            Weight::Full(_) => Ok(None),
            Weight::Q(w) => Ok(Some(quantize_q(&w.value()))),
            Weight::Ps { shift, sign } => quantize_ps(&shift.value(), &sign.value()).map(Some),
        }
    }

    /// The weight the forward pass multiplies by.
    pub fn effective_weight(&self) -> Result<Tensor<T>> {
        match (&self.weight, self.shift_weight()?) {
            (_, Some(sw)) => Ok(sw.materialize()),
            (Weight::Full(w), None) => Ok(w.value().clone()),
            _ => unreachable!(),
        }
    }
}

/// One stage of a [`Model`].
#[derive(Debug, Clone)]
pub enum Layer<T: Real = f64> {
    Affine(Affine<T>),
    Relu,
    MaxPool2d(usize),
    Dropout(f64),
    Flatten,
}

/// Sequential network.
#[derive(Debug, Clone)]
pub struct Model<T: Real = f64> {
    arch: Arch,
    mode: Mode,
    fmt: FixedPointFormat,
    layers: Vec<Layer<T>>,
    training: bool,
}

impl<T: Real> Model<T> {
    pub fn build(arch: Arch, mode: Mode, fmt: FixedPointFormat, init: &InitConfig, rng: &mut Rng) -> Result<Self> {
        let mut affine = |name: &str, kind, shape: &[usize]| -> Result<Layer<T>> {
            Ok(Layer::Affine(Affine::new(name, kind, shape, mode, init, rng)?))
        };
        let lin = ShiftKind::Linear;
        let conv = ShiftKind::Conv { stride: 1, padding: 0 };
        let layers = match arch {
            Arch::SimpleFc => vec![
                Layer::Flatten,
                affine("fc1", lin, &[512, 784])?,
                Layer::Relu,
                Layer::Dropout(0.2),
                affine("fc2", lin, &[512, 512])?,
                Layer::Relu,
                Layer::Dropout(0.2),
                affine("fc3", lin, &[10, 512])?,
            ],
            Arch::SimpleCnn => vec![
                affine("conv1", conv, &[20, 1, 5, 5])?,
                Layer::MaxPool2d(2),
                Layer::Relu,
                affine("conv2", conv, &[50, 20, 5, 5])?,
                Layer::MaxPool2d(2),
                Layer::Relu,
                Layer::Flatten,
                affine("fc1", lin, &[500, 800])?,
                Layer::Relu,
                affine("fc2", lin, &[10, 500])?,
            ],
        };
        Self::from_layers(arch, mode, fmt, layers)
    }

    /// Assembles a model, checking that parameter names are unique.
    pub fn from_layers(arch: Arch, mode: Mode, fmt: FixedPointFormat, layers: Vec<Layer<T>>) -> Result<Self> {
        let model = Self {
            arch,
            mode,
            fmt,
            layers,
            training: true,
        };
        let mut names: Vec<String> = model.parameters().iter().map(Parameter::name).collect();
        names.sort();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Inconsistent(format!("duplicate parameter name {}", w[0])));
        }
        Ok(model)
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn fixed_point(&self) -> FixedPointFormat {
        self.fmt
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn affine_layers(&self) -> impl Iterator<Item = &Affine<T>> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Affine(a) => Some(a),
            _ => None,
        })
    }

    pub fn set_training(&mut self, training: bool) {
        self.training = training;
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn parameters(&self) -> Vec<Parameter<T>> {
        self.affine_layers().flat_map(Affine::parameters).collect()
    }

    pub fn parameter(&self, name: &str) -> Option<Parameter<T>> {
        self.parameters().into_iter().find(|p| p.name() == name)
    }

    /// Number of scalars in the model (a PS weight counts once).
    pub fn num_weights_and_biases(&self) -> usize {
        self.affine_layers()
            .map(|a| a.shape.iter().product::<usize>() + a.shape[0])
            .sum()
    }

    /// Forward pass; `grad` binds parameters as trainable leaves. Dropout
    /// draws from `rng` in training mode only.
    pub fn forward(&self, tape: &mut Tape<T>, x: Var, rng: &mut Rng, grad: bool) -> Result<Var> {
        let mut h = x;
        for layer in &self.layers {
            h = match layer {
                Layer::Affine(a) => a.forward(tape, h, &self.fmt, grad)?,
                Layer::Relu => tape.relu(h),
                Layer::MaxPool2d(k) => tape.maxpool2d(h, *k)?,
                Layer::Dropout(p) => tape.dropout(h, *p, self.training, rng)?,
                Layer::Flatten => tape.flatten(h)?,
            };
        }
        Ok(h)
    }

    /// Logits for a batch without recording gradients.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let mut rng = Rng::new(0);
        let y = self.forward(&mut tape, xv, &mut rng, false)?;
        Ok(tape.value(y).clone())
    }

    /// Quantized weights of every shift layer, in layer order.
    pub fn shift_weights(&self) -> Result<Vec<(String, ShiftWeight)>> {
        let mut out = Vec::new();
        for a in self.affine_layers() {
            if let Some(sw) = a.shift_weight()? {
                out.push((a.name.clone(), sw));
            }
        }
        Ok(out)
    }

    /// Effective weights that are neither zero nor a power of two.
    pub fn count_non_pow2_weights(&self) -> Result<usize> {
        let mut n = 0;
        for a in self.affine_layers() {
            n += count_non_pow2(&a.effective_weight()?);
        }
        Ok(n)
    }

    /// `wd · Σ (S·2^P)²` over every PS layer, recorded on `tape` so that its
    /// gradient reaches `P` and `S`. `None` when the model has no PS layer.
    pub fn ps_regularization(&self, tape: &mut Tape<T>, weight_decay: f64) -> Result<Option<Var>> {
        let mut total: Option<Var> = None;
        for a in self.affine_layers() {
            if let Weight::Ps { shift, sign } = &a.weight {
                let p = tape.param(shift);
                let s = tape.param(sign);
                let term = crate::optim::ps_l2_regularization(tape, p, s, weight_decay)?;
                total = Some(match total {
                    Some(t) => tape.add(t, term)?,
                    None => term,
                });
            }
        }
        Ok(total)
    }

    /// Parameters that receive ordinary (optimizer-side) weight decay:
    /// full-precision and Q weights. Biases and PS parameters do not.
    pub fn decayed_parameters(&self) -> Vec<Parameter<T>> {
        self.affine_layers()
            .filter_map(|a| match &a.weight {
                Weight::Full(w) | Weight::Q(w) => Some(w.clone()),
                Weight::Ps { .. } => None,
            })
            .collect()
    }
}
