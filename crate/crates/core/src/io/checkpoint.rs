//! Training checkpoints and full-precision to shift conversion.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Arch, Mode, Model};
use crate::optim::{Optimizer, OptimizerKind};
use crate::rng::Rng;
use crate::scalar::Real;
use crate::shift::quantize_q;
use crate::tensor::{sign, Tensor};
use crate::train::{TrainConfig, Trainer};

use super::container::{Container, Payload};

const PARAM: &str = "param/";
const OPT: &str = "opt/";

/// Header of a training checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: String,
    pub arch: Arch,
    pub mode: Mode,
    pub epoch: usize,
    pub best_val_acc: Option<f64>,
    pub optimizer_steps: u64,
    pub config: TrainConfig,
}

/// Parameters, optimizer state and progress, all in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: Vec<(String, Tensor<f64>)>,
    pub optimizer_state: Vec<(String, Tensor<f64>)>,
}

impl Checkpoint {
    pub fn from_trainer<T: Real>(tr: &Trainer<T>) -> Self {
        Self {
            meta: CheckpointMeta {
                kind: "checkpoint".into(),
                arch: tr.config.arch,
                mode: tr.config.mode,
                epoch: tr.epoch,
                best_val_acc: tr.best_val_acc,
                optimizer_steps: tr.optimizer.steps(),
                config: tr.config.clone(),
            },
            params: tr
                .model
                .parameters()
                .iter()
                .map(|p| (p.name(), p.value().cast()))
                .collect(),
            optimizer_state: tr.optimizer.state().into_iter().map(|(k, t)| (k, t.cast())).collect(),
        }
    }

    /// Rebuilds the model with the stored parameter values.
    pub fn to_model<T: Real>(&self) -> Result<Model<T>> {
        let c = &self.meta.config;
        let model = Model::<T>::build(self.meta.arch, self.meta.mode, c.fixed_point, &c.init, &mut Rng::new(0))?;
        let expected = model.parameters();
        if expected.len() != self.params.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} parameters, {} {} needs {}",
                self.params.len(),
                self.meta.arch,
                self.meta.mode,
                expected.len()
            )));
        }
        for (name, t) in &self.params {
            let p = model
                .parameter(name)
                .ok_or_else(|| Error::Format(format!("unexpected parameter {name}")))?;
            p.set_value(t.cast())?;
        }
        Ok(model)
    }

    pub fn into_trainer<T: Real>(&self) -> Result<Trainer<T>> {
        let config = self.meta.config.clone();
        config.validate()?;
        let mut optimizer = Optimizer::new(config.optimizer, config.lr, config.momentum, config.weight_decay);
        optimizer.load_state(
            self.meta.optimizer_steps,
            self.optimizer_state
                .iter()
                .map(|(k, t)| (k.clone(), t.cast()))
                .collect(),
        )?;
        Ok(Trainer {
            model: self.to_model()?,
            optimizer,
            epoch: self.meta.epoch,
            best_val_acc: self.meta.best_val_acc,
            config,
        })
    }

    /// Serialized form. `compact` drops optimizer state and stores PS
    /// shift/sign parameters as their rounded `i8` values, which leaves the
    /// forward pass unchanged.
    pub fn to_container(&self, compact: bool) -> Result<Container> {
        let mut meta = self.meta.clone();
        if compact {
            meta.optimizer_steps = 0;
        }
        let mut c = Container::new(serde_json::to_value(&meta)?);
        for (name, t) in &self.params {
            let payload = if compact && self.meta.mode == Mode::DeepshiftPs && name.ends_with(".shift") {
                let shift = t.round();
                Payload::I8(to_i8(&shift, name)?)
            } else if compact && self.meta.mode == Mode::DeepshiftPs && name.ends_with(".sign") {
                Payload::I8(to_i8(&sign_of_round(t), name)?)
            } else {
                Payload::F64(t.data().to_vec())
            };
            c.push(format!("{PARAM}{name}"), t.shape(), payload);
        }
        if !compact {
            for (name, t) in &self.optimizer_state {
                c.push(format!("{OPT}{name}"), t.shape(), Payload::F64(t.data().to_vec()));
            }
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let meta: CheckpointMeta = serde_json::from_value(c.meta.clone())?;
        if meta.kind != "checkpoint" {
            return Err(Error::Format(format!("expected a checkpoint, found {:?}", meta.kind)));
        }
        let mut params = Vec::new();
        let mut optimizer_state = Vec::new();
        for r in &c.records {
            let t = Tensor::new(&r.dims, r.to_f64()?)?;
            if let Some(name) = r.name.strip_prefix(PARAM) {
                params.push((name.to_string(), t));
            } else if let Some(name) = r.name.strip_prefix(OPT) {
                optimizer_state.push((name.to_string(), t));
            } else {
                return Err(Error::Format(format!("unknown record {}", r.name)));
            }
        }
        Ok(Self {
            meta,
            params,
            optimizer_state,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>, compact: bool) -> Result<()> {
        self.to_container(compact)?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

fn sign_of_round(t: &Tensor<f64>) -> Tensor<f64> {
    t.map(|v| sign(v.round()))
}

fn to_i8(t: &Tensor<f64>, name: &str) -> Result<Vec<i8>> {
    t.data()
        .iter()
        .map(|&v| {
            if (-128.0..=127.0).contains(&v) {
                Ok(v as i8)
            } else {
                Err(Error::Conversion(format!("{name}: value {v} does not fit in i8")))
            }
        })
        .collect()
}

/// Converts a trained full-precision checkpoint for shift training.
///
/// Q: each weight becomes its nearest power of two (`W := W̃_q`).
/// PS: `P = log₂|W|` (continuous) and `S = sign(W)`; zero weights get
/// `P = 0`, `S = 0`. Biases are copied. The result starts at epoch 0 with
/// fresh optimizer state and the mode's default optimizer.
pub fn convert_model(src: &Checkpoint, mode: Mode) -> Result<Checkpoint> {
    if src.meta.mode != Mode::Original {
        return Err(Error::Conversion(format!(
            "source checkpoint is {}, expected original",
            src.meta.mode
        )));
    }
    if !mode.is_shift() {
        return Err(Error::Conversion(
            "target mode must be deepshift_q or deepshift_ps".into(),
        ));
    }
    let model = src.to_model::<f64>()?;
    let mut params = Vec::new();
    for layer in model.affine_layers() {
        let name = layer.name();
        let w = src
            .params
            .iter()
            .find(|(n, _)| *n == format!("{name}.weight"))
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Conversion(format!("layer {name} has no full-precision weight")))?;
        match mode {
            Mode::DeepshiftQ => params.push((format!("{name}.weight"), quantize_q(w).materialize())),
            _ => {
                let shift = w.map(|v| if v == 0.0 { 0.0 } else { v.abs().log2() });
                params.push((format!("{name}.shift"), shift));
                params.push((format!("{name}.sign"), w.sign()));
            }
        }
        params.push((format!("{name}.bias"), layer.bias().value().clone()));
    }
    let mut config = src.meta.config.clone();
    config.mode = mode;
    config.optimizer = TrainConfig::default_optimizer(mode);
    if config.optimizer == OptimizerKind::Radam {
        config.momentum = 0.0;
    }
    let out = Checkpoint {
        meta: CheckpointMeta {
            kind: "checkpoint".into(),
            arch: src.meta.arch,
            mode,
            epoch: 0,
            best_val_acc: None,
            optimizer_steps: 0,
            config,
        },
        params,
        optimizer_state: Vec::new(),
    };
    // The converted model must build; this also checks every name.
    out.to_model::<f64>()?;
    Ok(out)
}

/// Largest `|W − W̃| / |W̃|` over a converted checkpoint's shift layers,
/// relative to the source weights.
pub fn conversion_error(src: &Checkpoint, converted: &Checkpoint) -> Result<f64> {
    let model = converted.to_model::<f64>()?;
    let mut worst: f64 = 0.0;
    for (name, sw) in model.shift_weights()? {
        let w = &src
            .params
            .iter()
            .find(|(n, _)| *n == format!("{name}.weight"))
            .ok_or_else(|| Error::Conversion(format!("source has no {name}.weight")))?
            .1;
        let wt: Tensor<f64> = sw.materialize();
        for (&a, &b) in w.data().iter().zip(wt.data()) {
            if b != 0.0 {
                worst = worst.max((a - b).abs() / b.abs());
            }
        }
    }
    Ok(worst)
}
