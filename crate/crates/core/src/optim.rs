//! SGD with momentum, RAdam, and the L2 penalty on PS weights.
//!
//! Optimizer state is keyed by parameter name so it can be checkpointed
//! and restored independently of parameter order.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autograd::{Parameter, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Which update rule to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Radam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "radam" => Ok(Self::Radam),
            _ => Err(Error::InvalidArgument(format!("unknown optimizer {s:?}"))),
        }
    }
}

/// A parameter together with whether weight decay applies to it.
pub struct Slot<'a, T: Real> {
    pub param: &'a Parameter<T>,
    pub decay: bool,
}

/// Gradient with weight decay folded in, or `None` if the parameter has
/// no gradient this step.
fn decayed_grad<T: Real>(slot: &Slot<'_, T>, wd: f64) -> Option<Tensor<T>> {
    let g = slot.param.grad()?.clone();
    if slot.decay && wd != 0.0 {
        let wd = T::of(wd);
        let w = slot.param.value();
        Some(
            g.zip_map(&w, |g, w| g + wd * w)
                .expect("grad shape checked on accumulate"),
        )
    } else {
        Some(g)
    }
}

/// `v ← μ·v + (g + wd·w)`, `w ← w − lr·v`.
#[derive(Debug, Clone)]
pub struct Sgd<T: Real = f64> {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            momentum,
            weight_decay,
            velocity: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, slots: &[Slot<'_, T>]) {
        let (lr, mu) = (T::of(self.lr), T::of(self.momentum));
        for slot in slots {
            let Some(g) = decayed_grad(slot, self.weight_decay) else {
                continue;
            };
            let v = match self.velocity.get_mut(&slot.param.name()) {
                Some(v) => {
                    v.data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .for_each(|(v, &g)| *v = mu * *v + g);
                    v
                }
                None => self.velocity.entry(slot.param.name()).or_insert(g),
            };
            let mut w = slot.param.value_mut();
            w.data_mut().iter_mut().zip(v.data()).for_each(|(w, &v)| *w -= lr * v);
        }
    }
}

/// Rectified Adam.
#[derive(Debug, Clone)]
pub struct RAdam<T: Real = f64> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: BTreeMap<String, Tensor<T>>,
    v: BTreeMap<String, Tensor<T>>,
}

/// Length limit of the approximated simple moving average, `2/(1−β2) − 1`.
pub fn rho_inf(beta2: f64) -> f64 {
    2.0 / (1.0 - beta2) - 1.0
}

/// `ρ_t = ρ∞ − 2tβ2^t / (1 − β2^t)`.
pub fn rho_t(beta2: f64, t: u64) -> f64 {
    let b = beta2.powi(t as i32);
    rho_inf(beta2) - 2.0 * t as f64 * b / (1.0 - b)
}

/// Variance rectification term, `None` while `ρ_t ≤ 4`.
pub fn rectification(beta2: f64, t: u64) -> Option<f64> {
    let (ri, rt) = (rho_inf(beta2), rho_t(beta2, t));
    (rt > 4.0).then(|| ((rt - 4.0) * (rt - 2.0) * ri / ((ri - 4.0) * (ri - 2.0) * rt)).sqrt())
}

impl<T: Real> RAdam<T> {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, slots: &[Slot<'_, T>]) {
        self.step += 1;
        let t = self.step;
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = 1.0 - b1.powi(t as i32);
        let bc2 = 1.0 - b2.powi(t as i32);
        let rect = rectification(b2, t);
        let (tb1, tb2) = (T::of(b1), T::of(b2));
        let (one, eps) = (T::one(), T::of(self.eps));
        for slot in slots {
            let Some(g) = decayed_grad(slot, self.weight_decay) else {
                continue;
            };
            let name = slot.param.name();
            let zeros = || Tensor::zeros(g.shape());
            let m = self.m.entry(name.clone()).or_insert_with(zeros);
            m.data_mut()
                .iter_mut()
                .zip(g.data())
                .for_each(|(m, &g)| *m = tb1 * *m + (one - tb1) * g);
            let v = self.v.entry(name).or_insert_with(zeros);
            v.data_mut()
                .iter_mut()
                .zip(g.data())
                .for_each(|(v, &g)| *v = tb2 * *v + (one - tb2) * g * g);
            let mut w = slot.param.value_mut();
            let step_m = T::of(self.lr / bc1);
            match rect {
                Some(r) => {
                    let k = T::of(self.lr * r / bc1);
                    let sbc2 = T::of(bc2.sqrt());
                    for ((w, &m), &v) in w.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
                        *w -= k * m / (v.sqrt() / sbc2 + eps);
                    }
                }
                None => w
                    .data_mut()
                    .iter_mut()
                    .zip(m.data())
                    .for_each(|(w, &m)| *w -= step_m * m),
            }
        }
    }
}

/// Either optimizer, with checkpointable state.
#[derive(Debug, Clone)]
pub enum Optimizer<T: Real = f64> {
    Sgd(Sgd<T>),
    Radam(RAdam<T>),
}

impl<T: Real> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64, momentum: f64, weight_decay: f64) -> Self {
        match kind {
            OptimizerKind::Sgd => Self::Sgd(Sgd::new(lr, momentum, weight_decay)),
            OptimizerKind::Radam => Self::Radam(RAdam::new(lr, weight_decay)),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        match self {
            Self::Sgd(_) => OptimizerKind::Sgd,
            Self::Radam(_) => OptimizerKind::Radam,
        }
    }

    pub fn step(&mut self, slots: &[Slot<'_, T>]) {
        match self {
            Self::Sgd(o) => o.step(slots),
            Self::Radam(o) => o.step(slots),
        }
    }

    /// Step counter (RAdam only; zero for SGD).
    pub fn steps(&self) -> u64 {
        match self {
            Self::Sgd(_) => 0,
            Self::Radam(o) => o.step,
        }
    }

    /// State tensors as `(key, tensor)`, keys like `velocity/fc1.weight`.
    pub fn state(&self) -> Vec<(String, Tensor<T>)> {
        let tag = |prefix: &str, map: &BTreeMap<String, Tensor<T>>| {
            map.iter()
                .map(|(k, v)| (format!("{prefix}/{k}"), v.clone()))
                .collect::<Vec<_>>()
        };
        match self {
            Self::Sgd(o) => tag("velocity", &o.velocity),
            Self::Radam(o) => {
                let mut out = tag("m", &o.m);
                out.extend(tag("v", &o.v));
                out
            }
        }
    }

    /// Restores state saved by [`Optimizer::state`].
    pub fn load_state(&mut self, steps: u64, state: Vec<(String, Tensor<T>)>) -> Result<()> {
        for (key, t) in state {
            let (prefix, name) = key
                .split_once('/')
                .ok_or_else(|| Error::Format(format!("optimizer state key {key:?}")))?;
            let map = match (&mut *self, prefix) {
                (Self::Sgd(o), "velocity") => &mut o.velocity,
                (Self::Radam(o), "m") => &mut o.m,
                (Self::Radam(o), "v") => &mut o.v,
                _ => {
                    return Err(Error::Format(format!(
                        "optimizer state key {key:?} for {:?}",
                        self.kind()
                    )))
                }
            };
            map.insert(name.to_string(), t);
        }
        if let Self::Radam(o) = self {
            o.step = steps;
        }
        Ok(())
    }
}

/// `wd · Σ (S·2^P)²` on the continuous `P`, `S`.
pub fn ps_l2_regularization<T: Real>(tape: &mut Tape<T>, p: Var, s: Var, weight_decay: f64) -> Result<Var> {
    let w = tape.relaxed_weight(p, s)?;
    let sq = tape.square(w);
    let total = tape.sum(sq);
    Ok(tape.scale(total, T::of(weight_decay)))
}
