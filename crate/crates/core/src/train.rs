//! Mini-batch training and evaluation.
//!
//! Each epoch draws its shuffle order and dropout masks from streams
//! derived from `(seed, purpose, epoch)`, so a run resumed from the
//! checkpoint of epoch `k` continues exactly like the uninterrupted run.

use std::collections::BTreeSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autograd::{zero_grad, Parameter, Tape};
use crate::error::{Error, Result};
use crate::io::mnist::Dataset;
use crate::kernel::IntegerNetwork;
use crate::nn::{Arch, InitConfig, Mode, Model};
use crate::optim::{Optimizer, OptimizerKind, Slot};
use crate::rng::Rng;
use crate::scalar::Real;
use crate::shift::FixedPointFormat;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub arch: Arch,
    pub mode: Mode,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub fixed_point: FixedPointFormat,
    pub init: InitConfig,
    /// Train on the first `n` training images only.
    pub train_subset: Option<usize>,
}

impl TrainConfig {
    /// MNIST defaults: lr 0.01, momentum 0, batch 64, 20 epochs; RAdam for
    /// PS and SGD otherwise.
    pub fn new(arch: Arch, mode: Mode) -> Self {
        Self {
            arch,
            mode,
            optimizer: Self::default_optimizer(mode),
            lr: 0.01,
            momentum: 0.0,
            weight_decay: 0.0,
            epochs: 20,
            batch_size: 64,
            seed: 1,
            fixed_point: FixedPointFormat::default(),
            init: InitConfig::default(),
            train_subset: None,
        }
    }

    pub fn default_optimizer(mode: Mode) -> OptimizerKind {
        match mode {
            Mode::DeepshiftPs => OptimizerKind::Radam,
            _ => OptimizerKind::Sgd,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("weight decay must be non-negative, got {}", self.weight_decay));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.train_subset == Some(0) {
            return bad("train subset must be at least 1".into());
        }
        if self.optimizer == OptimizerKind::Radam && self.momentum != 0.0 {
            return bad("momentum applies to sgd only".into());
        }
        Ok(())
    }
}

/// One row of the metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    /// Percent.
    pub train_acc: f64,
    pub val_loss: f64,
    /// Percent.
    pub val_acc: f64,
    pub wall_s: f64,
    pub non_pow2_weights: usize,
}

impl EpochMetrics {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,train_acc,val_loss,val_acc,wall_s,non_pow2_weights";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.4},{:.6},{:.4},{:.3},{}",
            self.epoch,
            self.train_loss,
            self.train_acc,
            self.val_loss,
            self.val_acc,
            self.wall_s,
            self.non_pow2_weights
        )
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 7 {
            return Err(Error::Format(format!("metrics row has {} fields: {line:?}", f.len())));
        }
        let num = |i: usize| {
            f[i].parse::<f64>()
                .map_err(|_| Error::Format(format!("bad number {:?} in metrics row", f[i])))
        };
        let int = |i: usize| {
            f[i].parse::<usize>()
                .map_err(|_| Error::Format(format!("bad integer {:?} in metrics row", f[i])))
        };
        Ok(Self {
            epoch: int(0)?,
            train_loss: num(1)?,
            train_acc: num(2)?,
            val_loss: num(3)?,
            val_acc: num(4)?,
            wall_s: num(5)?,
            non_pow2_weights: int(6)?,
        })
    }
}

/// Accuracy and loss of a model over a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub loss: f64,
    pub correct: usize,
    pub total: usize,
    pub predictions: Vec<usize>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    /// Percent.
    pub fn accuracy(&self) -> f64 {
        100.0 * self.correct as f64 / self.total.max(1) as f64
    }

    pub fn from_predictions(predictions: Vec<usize>, labels: &[u8], loss: f64, classes: usize) -> Self {
        let mut confusion = vec![vec![0; classes]; classes];
        let mut correct = 0;
        for (&p, &y) in predictions.iter().zip(labels) {
            let y = usize::from(y);
            correct += usize::from(p == y);
            if y < classes && p < classes {
                confusion[y][p] += 1;
            }
        }
        Self {
            loss,
            correct,
            total: labels.len(),
            predictions,
            confusion,
        }
    }
}

/// Evaluates `model` in eval mode (dropout off).
pub fn evaluate<T: Real>(model: &Model<T>, data: &Dataset<T>, batch_size: usize) -> Result<EvalReport> {
    let mut model = model.clone();
    model.set_training(false);
    let mut loss_sum = 0.0;
    let mut predictions = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, labels) = data.batch(chunk);
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let logits = model.forward(&mut tape, xv, &mut Rng::new(0), false)?;
        let loss = tape.softmax_cross_entropy(logits, &labels)?;
        loss_sum += tape.value(loss).item()?.as_f64() * chunk.len() as f64;
        predictions.extend(tape.value(logits).argmax_rows()?);
    }
    Ok(EvalReport::from_predictions(
        predictions,
        data.labels(),
        loss_sum / data.len().max(1) as f64,
        10,
    ))
}

/// [`evaluate`] through the integer shift-add engine. The loss is the
/// cross-entropy of the dequantized logits.
pub fn evaluate_integer<T: Real>(net: &IntegerNetwork, data: &Dataset<T>, batch_size: usize) -> Result<EvalReport> {
    let mut loss_sum = 0.0;
    let mut predictions = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, labels) = data.batch(chunk);
        let logits = net.forward(&x)?.logits;
        predictions.extend(logits.argmax_rows()?);
        let mut tape = Tape::<f64>::new();
        let lv = tape.constant(logits.to_real());
        let loss = tape.softmax_cross_entropy(lv, &labels)?;
        loss_sum += tape.value(loss).item()? * chunk.len() as f64;
    }
    Ok(EvalReport::from_predictions(
        predictions,
        data.labels(),
        loss_sum / data.len().max(1) as f64,
        10,
    ))
}

/// Model, optimizer and progress of one training run.
#[derive(Debug, Clone)]
pub struct Trainer<T: Real = f64> {
    pub config: TrainConfig,
    pub model: Model<T>,
    pub optimizer: Optimizer<T>,
    /// Completed epochs.
    pub epoch: usize,
    /// Best validation accuracy so far (percent).
    pub best_val_acc: Option<f64>,
}

impl<T: Real> Trainer<T> {
    /// Fresh run; weights are drawn from the `(seed, "init")` stream.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::derive(config.seed, "init", 0);
        let model = Model::build(config.arch, config.mode, config.fixed_point, &config.init, &mut rng)?;
        let optimizer = Optimizer::new(config.optimizer, config.lr, config.momentum, config.weight_decay);
        Ok(Self {
            config,
            model,
            optimizer,
            epoch: 0,
            best_val_acc: None,
        })
    }

    fn slots<'a>(params: &'a [Parameter<T>], decayed: &BTreeSet<String>) -> Vec<Slot<'a, T>> {
        params
            .iter()
            .map(|p| Slot {
                param: p,
                decay: decayed.contains(&p.name()),
            })
            .collect()
    }

    /// One epoch over `data`; returns mean loss and accuracy (percent) of
    /// the training forward passes.
    pub fn train_epoch(&mut self, data: &Dataset<T>) -> Result<(f64, f64)> {
        let epoch = self.epoch as u64 + 1;
        let order = Rng::derive(self.config.seed, "shuffle", epoch).permutation(data.len());
        let mut dropout = Rng::derive(self.config.seed, "dropout", epoch);
        self.model.set_training(true);
        let params = self.model.parameters();
        let decayed: BTreeSet<String> = self.model.decayed_parameters().iter().map(Parameter::name).collect();
        let ps_decay = self.config.mode == Mode::DeepshiftPs && self.config.weight_decay > 0.0;
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(self.config.batch_size) {
            let (x, labels) = data.batch(chunk);
            let mut tape = Tape::new();
            let xv = tape.constant(x);
            let logits = self.model.forward(&mut tape, xv, &mut dropout, true)?;
            let ce = tape.softmax_cross_entropy(logits, &labels)?;
            let mut total = ce;
            if ps_decay {
                if let Some(reg) = self.model.ps_regularization(&mut tape, self.config.weight_decay)? {
                    total = tape.add(ce, reg)?;
                }
            }
            let loss = tape.value(ce).item()?.as_f64();
            if !loss.is_finite() {
                return Err(Error::Domain(format!("training loss diverged at epoch {epoch}")));
            }
            loss_sum += loss * chunk.len() as f64;
            correct += tape
                .value(logits)
                .argmax_rows()?
                .iter()
                .zip(&labels)
                .filter(|(p, y)| p == y)
                .count();
            zero_grad(&params);
            tape.backward(total)?;
            self.optimizer.step(&Self::slots(&params, &decayed));
        }
        self.epoch += 1;
        let n = data.len().max(1) as f64;
        Ok((loss_sum / n, 100.0 * correct as f64 / n))
    }

    /// Trains one epoch, evaluates on `val` and records the best accuracy.
    pub fn run_epoch(&mut self, train: &Dataset<T>, val: &Dataset<T>) -> Result<EpochMetrics> {
        let start = Instant::now();
        let (train_loss, train_acc) = self.train_epoch(train)?;
        let report = evaluate(&self.model, val, 1000)?;
        let val_acc = report.accuracy();
        if self.best_val_acc.is_none_or(|b| val_acc > b) {
            self.best_val_acc = Some(val_acc);
        }
        Ok(EpochMetrics {
            epoch: self.epoch,
            train_loss,
            train_acc,
            val_loss: report.loss,
            val_acc,
            wall_s: start.elapsed().as_secs_f64(),
            non_pow2_weights: self.model.count_non_pow2_weights()?,
        })
    }

    /// True when the last epoch set a new best validation accuracy.
    pub fn is_best(&self, metrics: &EpochMetrics) -> bool {
        self.best_val_acc == Some(metrics.val_acc)
    }
}
