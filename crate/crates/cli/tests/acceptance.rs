//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 1-3 read the training results committed under `results/`
//! (produced by `scripts/reproduce_mnist.sh`); the rest run live. A failing
//! criterion is reported, not asserted, unless `DEEPSHIFT_ACCEPTANCE_STRICT=1`.

mod common;

use std::collections::BTreeSet;
use std::f64::consts::LN_2;
use std::path::{Path, PathBuf};

use common::{mnist_dir, read_metrics, repo_root, run};
use deepshift::autograd::{Tape, Var};
use deepshift::io::Checkpoint;
use deepshift::kernel::{multiply_matmul, shift_conv2d, shift_matmul, FixedTensor, PackedShiftTensor, SENTINEL};
use deepshift::linalg::ConvGeometry;
use deepshift::nn::Model;
use deepshift::shift::{FixedPointFormat, ShiftKind, ShiftVars};
use deepshift::train::TrainConfig;
use deepshift::{Rng, Tensor};

struct Outcome {
    pass: bool,
    detail: String,
}

fn pass(detail: impl Into<String>) -> Outcome {
    Outcome {
        pass: true,
        detail: detail.into(),
    }
}

fn fail(detail: impl Into<String>) -> Outcome {
    Outcome {
        pass: false,
        detail: detail.into(),
    }
}

fn results_dir() -> PathBuf {
    repo_root().join("results")
}

/// Trained Simple FC models (seed 1) used by the live end-to-end checks.
fn fc_checkpoint(mode: &str) -> PathBuf {
    results_dir().join(format!("simple_fc/{mode}/seed1/best.ckpt"))
}

const SHIFT_MODES: [&str; 2] = ["deepshift_q", "deepshift_ps"];

const SEEDS: [u32; 3] = [1, 2, 3];
const MODES: [&str; 3] = ["original", "deepshift_q", "deepshift_ps"];

/// Final-epoch accuracy of one run after checking it followed the protocol.
fn run_accuracy(dir: &Path, epochs: usize) -> Result<f64, String> {
    let rows = read_metrics(&dir.join("metrics.csv"))?;
    if rows.len() != epochs || rows.last().map(|r| r.epoch) != Some(epochs) {
        return Err(format!("{}: {} of {epochs} epochs", dir.display(), rows.len()));
    }
    let cfg: TrainConfig = serde_json::from_str(
        &std::fs::read_to_string(dir.join("config.json")).map_err(|e| format!("{}: {e}", dir.display()))?,
    )
    .map_err(|e| e.to_string())?;
    if cfg.lr != 0.01 || cfg.momentum != 0.0 || cfg.batch_size != 64 || cfg.train_subset.is_some() {
        return Err(format!(
            "{}: not the lr 0.01 / momentum 0 / batch 64 protocol",
            dir.display()
        ));
    }
    if cfg.optimizer != TrainConfig::default_optimizer(cfg.mode) {
        return Err(format!("{}: optimizer {:?}", dir.display(), cfg.optimizer));
    }
    Ok(rows.last().unwrap().val_acc)
}

fn seed_mean(arch: &str, mode: &str) -> Result<(f64, f64), String> {
    let mut accs = Vec::new();
    let mut wall: f64 = 0.0;
    for seed in SEEDS {
        let dir = results_dir().join(format!("{arch}/{mode}/seed{seed}"));
        accs.push(run_accuracy(&dir, 20)?);
        let rows = read_metrics(&dir.join("metrics.csv"))?;
        wall = wall.max(rows.iter().map(|r| r.wall_s).sum());
    }
    Ok((accs.iter().sum::<f64>() / accs.len() as f64, wall))
}

fn scratch_criterion(arch: &str, thresholds: [f64; 3], max_minutes: f64) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (mode, min) in MODES.iter().zip(thresholds) {
        match seed_mean(arch, mode) {
            Ok((acc, wall)) => {
                let good = acc >= min;
                ok &= good;
                parts.push(format!(
                    "{mode} {acc:.2}% (need ≥ {min}; slowest run {:.1} min, budget {max_minutes})",
                    wall / 60.0
                ));
            }
            Err(e) => {
                ok = false;
                parts.push(format!("{mode}: {e}"));
            }
        }
    }
    Outcome {
        pass: ok,
        detail: parts.join("; "),
    }
}

fn criterion_1() -> Outcome {
    scratch_criterion("simple_fc", [96.2, 96.2, 97.3], 20.0)
}

fn criterion_2() -> Outcome {
    let mut o = scratch_criterion("simple_cnn", [98.0, 98.0, 98.3], 120.0);
    let dir = results_dir().join("simple_cnn/smoke");
    match read_metrics(&dir.join("metrics.csv")) {
        Ok(rows) if !rows.is_empty() => {
            let acc = rows.last().unwrap().val_acc;
            let minutes = rows.iter().map(|r| r.wall_s).sum::<f64>() / 60.0;
            let good = acc >= 96.0 && minutes <= 15.0;
            o.pass &= good;
            o.detail += &format!("; smoke (10000 images) {acc:.2}% in {minutes:.1} min (need ≥ 96 in ≤ 15)");
        }
        Ok(_) => {
            o.pass = false;
            o.detail += "; smoke run has no epochs";
        }
        Err(e) => {
            o.pass = false;
            o.detail += &format!("; smoke: {e}");
        }
    }
    o
}

fn criterion_3() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for mode in ["deepshift_q", "deepshift_ps"] {
        let dir = results_dir().join(format!("simple_cnn/{mode}_pretrained/seed1"));
        let outcome = run_accuracy(&dir, 5).and_then(|ft| Ok((ft, seed_mean("simple_cnn", mode)?.0)));
        match outcome {
            Ok((ft, scratch)) => {
                let good = ft >= scratch - 0.5;
                ok &= good;
                parts.push(format!(
                    "{mode}: converted + 5 epochs {ft:.2}% vs scratch {scratch:.2}% − 0.5"
                ));
            }
            Err(e) => {
                ok = false;
                parts.push(format!("{mode}: {e}"));
            }
        }
    }
    Outcome {
        pass: ok,
        detail: parts.join("; "),
    }
}

/// `w` is zero or `±2^e` for an integer `e`, decided on the bit pattern.
fn is_zero_or_pow2(w: f64) -> bool {
    let bits = w.abs().to_bits();
    let (exp, mantissa) = (bits >> 52, bits & ((1 << 52) - 1));
    w == 0.0 || (exp != 0 && exp != 0x7ff && mantissa == 0) || (exp == 0 && mantissa.is_power_of_two())
}

fn criterion_4() -> Outcome {
    let mut epochs = 0;
    let mut problems = Vec::new();
    for arch in ["simple_fc", "simple_cnn"] {
        for mode in ["deepshift_q", "deepshift_ps"] {
            for seed in SEEDS {
                let path = results_dir().join(format!("{arch}/{mode}/seed{seed}/metrics.csv"));
                match read_metrics(&path) {
                    Ok(rows) => {
                        if rows.len() < 20 {
                            problems.push(format!("{arch}/{mode}/seed{seed}: {} epochs", rows.len()));
                        }
                        for r in rows {
                            epochs += 1;
                            if r.non_pow2_weights != 0 {
                                problems.push(format!(
                                    "{arch}/{mode}/seed{seed} epoch {}: {}",
                                    r.epoch, r.non_pow2_weights
                                ));
                            }
                        }
                    }
                    Err(e) => problems.push(e),
                }
            }
        }
    }
    // Live: the committed models' effective weights, checked bit by bit.
    let mut live = Vec::new();
    for mode in SHIFT_MODES {
        let checked = Checkpoint::load(fc_checkpoint(mode))
            .map_err(|e| e.to_string())
            .and_then(|ck| ck.to_model::<f64>().map_err(|e| e.to_string()))
            .and_then(|m: Model| {
                let mut n = 0;
                for a in m.affine_layers() {
                    let w = a.effective_weight().map_err(|e| e.to_string())?;
                    if let Some(bad) = w.data().iter().find(|&&v| !is_zero_or_pow2(v)) {
                        return Err(format!("{}: weight {bad} is not a power of two", a.name()));
                    }
                    n += w.numel();
                }
                Ok(n)
            });
        match checked {
            Ok(n) => live.push(format!("{n} weights of the committed FC {mode} model are 0 or ±2^k")),
            Err(e) => problems.push(format!("{mode}: {e}")),
        }
    }
    let live_detail = live.join(", ");
    if problems.is_empty() {
        pass(format!(
            "{epochs} shift-mode epochs report 0 non-power-of-two weights; {live_detail}"
        ))
    } else {
        fail(problems.join("; "))
    }
}

// ---- criterion 5: gradient oracles -------------------------------------

const FD_EPS: f64 = 1e-5;
const RTOL: f64 = 1e-4;
const ATOL: f64 = 1e-8;

type Build = dyn Fn(&mut Tape<f64>, &[Var]) -> Var;

/// Loss `Σ f(inputs) ⊙ r` for a fixed random `r`.
fn loss_of(build: &Build, inputs: &[Tensor], r: &Tensor, grad: bool) -> (f64, Vec<Option<Tensor>>) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), grad)).collect();
    let y = build(&mut tape, &vars);
    let rv = tape.constant(r.clone());
    let p = tape.mul(y, rv).unwrap();
    let l = tape.sum(p);
    let value = tape.value(l).item().unwrap();
    if !grad {
        return (value, Vec::new());
    }
    tape.backward(l).unwrap();
    (value, vars.iter().map(|&v| tape.grad(v).cloned()).collect())
}

fn output_shape(build: &Build, inputs: &[Tensor]) -> Vec<usize> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
    let y = build(&mut tape, &vars);
    tape.value(y).shape().to_vec()
}

/// Central differences against backprop for every input element.
fn fd_check(build: &Build, inputs: Vec<Tensor>, rng: &mut Rng) -> Result<(), String> {
    let r = rng.uniform_tensor::<f64>(&output_shape(build, &inputs), -1.0, 1.0);
    let (_, grads) = loss_of(build, &inputs, &r, true);
    for (which, g) in grads.iter().enumerate() {
        let g = g.as_ref().ok_or("missing gradient")?;
        for i in 0..inputs[which].numel() {
            let mut plus = inputs.clone();
            plus[which].data_mut()[i] += FD_EPS;
            let mut minus = inputs.clone();
            minus[which].data_mut()[i] -= FD_EPS;
            let numeric = (loss_of(build, &plus, &r, false).0 - loss_of(build, &minus, &r, false).0) / (2.0 * FD_EPS);
            let analytic = g.data()[i];
            if (analytic - numeric).abs() > RTOL * analytic.abs().max(numeric.abs()) + ATOL {
                return Err(format!("input {which}[{i}]: analytic {analytic} vs numeric {numeric}"));
            }
        }
    }
    Ok(())
}

fn uniform(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    rng.uniform_tensor(shape, lo, hi)
}

/// Values kept away from the ReLU kink.
fn away_from_zero(rng: &mut Rng, shape: &[usize]) -> Tensor {
    uniform(rng, shape, -1.0, 1.0).map(|v| if v.abs() < 0.05 { v + 0.1f64.copysign(v) } else { v })
}

/// Distinct values, so every pooling window has a clear maximum.
fn distinct(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let perm = rng.permutation(n);
    Tensor::new(shape, perm.iter().map(|&p| p as f64 * 0.01 - 0.3).collect()).unwrap()
}

fn dims(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

type Case = (&'static str, Box<Build>, Vec<Tensor>);

fn gradient_case(kind: usize, rng: &mut Rng) -> Case {
    let (m, k, n) = (dims(rng, 1, 4), dims(rng, 1, 5), dims(rng, 1, 4));
    match kind {
        0 => (
            "add (broadcast)",
            Box::new(|t, v| t.add(v[0], v[1]).unwrap()),
            vec![uniform(rng, &[m, n], -1.0, 1.0), uniform(rng, &[n], -1.0, 1.0)],
        ),
        1 => (
            "sub",
            Box::new(|t, v| t.sub(v[0], v[1]).unwrap()),
            vec![uniform(rng, &[m, n], -1.0, 1.0), uniform(rng, &[m, n], -1.0, 1.0)],
        ),
        2 => (
            "mul",
            Box::new(|t, v| t.mul(v[0], v[1]).unwrap()),
            vec![uniform(rng, &[m, n], -1.0, 1.0), uniform(rng, &[1, n], -1.0, 1.0)],
        ),
        3 => {
            let c = rng.uniform(-2.0, 2.0);
            (
                "scale",
                Box::new(move |t, v| t.scale(v[0], c)),
                vec![uniform(rng, &[m, n], -1.0, 1.0)],
            )
        }
        4 => (
            "square",
            Box::new(|t, v| t.square(v[0])),
            vec![uniform(rng, &[m, n], -1.0, 1.0)],
        ),
        5 => (
            "exp2",
            Box::new(|t, v| t.exp2(v[0])),
            vec![uniform(rng, &[m, n], -3.0, 2.0)],
        ),
        6 => (
            "sum",
            Box::new(|t, v| {
                let s = t.sum(v[0]);
                t.reshape(s, &[1]).unwrap()
            }),
            vec![uniform(rng, &[m, n], -1.0, 1.0)],
        ),
        7 => (
            "flatten",
            Box::new(|t, v| t.flatten(v[0]).unwrap()),
            vec![uniform(rng, &[m, 2, n], -1.0, 1.0)],
        ),
        8 => (
            "matmul",
            Box::new(|t, v| t.matmul(v[0], v[1]).unwrap()),
            vec![uniform(rng, &[m, k], -1.0, 1.0), uniform(rng, &[k, n], -1.0, 1.0)],
        ),
        9 => (
            "matmul_nt",
            Box::new(|t, v| t.matmul_nt(v[0], v[1]).unwrap()),
            vec![uniform(rng, &[m, k], -1.0, 1.0), uniform(rng, &[n, k], -1.0, 1.0)],
        ),
        10 => (
            "linear",
            Box::new(|t, v| t.linear(v[0], v[1], v[2]).unwrap()),
            vec![
                uniform(rng, &[m, k], -1.0, 1.0),
                uniform(rng, &[n, k], -1.0, 1.0),
                uniform(rng, &[n], -1.0, 1.0),
            ],
        ),
        11 => {
            let (stride, padding) = (dims(rng, 1, 2), dims(rng, 0, 1));
            let size = if stride == 2 { 5 + 2 * (1 - padding) % 2 } else { 5 };
            (
                "conv2d + bias",
                Box::new(move |t, v| t.conv2d_bias(v[0], v[1], v[2], stride, padding).unwrap()),
                vec![
                    uniform(rng, &[2, 2, size, size], -1.0, 1.0),
                    uniform(rng, &[n, 2, 3, 3], -1.0, 1.0),
                    uniform(rng, &[n], -1.0, 1.0),
                ],
            )
        }
        12 => (
            "relu",
            Box::new(|t, v| t.relu(v[0])),
            vec![away_from_zero(rng, &[m, n])],
        ),
        13 => (
            "maxpool2d",
            Box::new(|t, v| t.maxpool2d(v[0], 2).unwrap()),
            vec![distinct(rng, &[1, 2, 4, 4])],
        ),
        14 => {
            let labels: Vec<usize> = (0..m).map(|_| rng.below(n + 1)).collect();
            (
                "softmax cross-entropy",
                Box::new(move |t, v| {
                    let l = t.softmax_cross_entropy(v[0], &labels).unwrap();
                    t.reshape(l, &[1]).unwrap()
                }),
                vec![uniform(rng, &[m, n + 1], -2.0, 2.0)],
            )
        }
        15 => {
            let seed = rng.below(1 << 30) as u64;
            (
                "dropout (fixed mask)",
                Box::new(move |t, v| t.dropout(v[0], 0.3, true, &mut Rng::new(seed)).unwrap()),
                vec![uniform(rng, &[m, n], -1.0, 1.0)],
            )
        }
        16 => (
            "relaxed PS linear",
            Box::new(|t, v| {
                t.relaxed_shift_layer(ShiftKind::Linear, v[0], v[1], v[2], v[3])
                    .unwrap()
            }),
            vec![
                uniform(rng, &[m, k], -1.0, 1.0),
                uniform(rng, &[n, k], -4.0, 0.5),
                uniform(rng, &[n, k], -1.0, 1.0),
                uniform(rng, &[n], -1.0, 1.0),
            ],
        ),
        _ => {
            let padding = dims(rng, 0, 1);
            (
                "relaxed PS conv",
                Box::new(move |t, v| {
                    t.relaxed_shift_layer(ShiftKind::Conv { stride: 1, padding }, v[0], v[1], v[2], v[3])
                        .unwrap()
                }),
                vec![
                    uniform(rng, &[1, 2, 4, 4], -1.0, 1.0),
                    uniform(rng, &[n, 2, 3, 3], -4.0, 0.5),
                    uniform(rng, &[n, 2, 3, 3], -1.0, 1.0),
                    uniform(rng, &[n], -1.0, 1.0),
                ],
            )
        }
    }
}

const GRADIENT_KINDS: usize = 18;

/// Quantized PS layer: `grad_P` must equal `grad_S ⊙ W̃ · ln 2` exactly,
/// with `W̃ = sign(round(S)) · 2^round(P)` computed here independently.
fn ps_identity_case(conv: bool, rng: &mut Rng) -> Result<(), String> {
    let (kind, x_shape, w_shape) = if conv {
        (
            ShiftKind::Conv { stride: 1, padding: 1 },
            vec![2, 2, 5, 5],
            vec![3, 2, 3, 3],
        )
    } else {
        (ShiftKind::Linear, vec![4, 6], vec![5, 6])
    };
    let p0 = uniform(rng, &w_shape, -8.0, 1.0);
    let s0 = uniform(rng, &w_shape, -1.5, 1.5);
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(uniform(rng, &x_shape, -1.0, 1.0), false);
    let p = tape.leaf(p0.clone(), true);
    let s = tape.leaf(s0.clone(), true);
    let b = tape.leaf(uniform(rng, &w_shape[..1], -1.0, 1.0), true);
    let y = tape
        .shift_layer(
            kind,
            x,
            ShiftVars::Ps { shift: p, sign: s },
            b,
            &FixedPointFormat::default(),
        )
        .map_err(|e| e.to_string())?;
    let r = tape.constant(uniform(rng, tape.value(y).shape(), -1.0, 1.0));
    let prod = tape.mul(y, r).unwrap();
    let l = tape.sum(prod);
    tape.backward(l).unwrap();
    let (gp, gs) = (tape.grad(p).unwrap(), tape.grad(s).unwrap());
    for i in 0..p0.numel() {
        let sr = s0.data()[i].round();
        let sign = if sr > 0.0 {
            1.0
        } else if sr < 0.0 {
            -1.0
        } else {
            0.0
        };
        let w = sign * 2f64.powi(p0.data()[i].round() as i32);
        if gp.data()[i] != gs.data()[i] * w * LN_2 {
            return Err(format!(
                "element {i}: grad_P {} vs {}",
                gp.data()[i],
                gs.data()[i] * w * LN_2
            ));
        }
    }
    Ok(())
}

fn criterion_5() -> Outcome {
    let mut rng = Rng::new(20_240_505);
    let per_kind = 12;
    let mut failures = Vec::new();
    let mut covered = BTreeSet::new();
    let mut instances = 0;
    for rep in 0..per_kind {
        for kind in 0..GRADIENT_KINDS {
            let (name, build, inputs) = gradient_case(kind, &mut rng);
            covered.insert(name);
            instances += 1;
            if let Err(e) = fd_check(build.as_ref(), inputs, &mut rng) {
                failures.push(format!("{name} #{rep}: {e}"));
            }
        }
    }
    let mut identity = 0;
    for i in 0..200 {
        identity += 1;
        if let Err(e) = ps_identity_case(i % 2 == 1, &mut rng) {
            failures.push(format!("PS identity #{i}: {e}"));
        }
    }
    let detail = format!(
        "{instances} finite-difference instances over {} ops (rtol {RTOL:e}, atol {ATOL:e}), {identity} exact PS identity instances",
        covered.len()
    );
    if failures.is_empty() {
        pass(detail)
    } else {
        fail(format!("{detail}; {} failures, first: {}", failures.len(), failures[0]))
    }
}

// ---- criterion 6: kernel equivalence -----------------------------------

/// `±floor(x / 2^m)` straight from the definition, in 128-bit arithmetic.
fn reference_term(x: i32, code: u8) -> i128 {
    if code == SENTINEL {
        return 0;
    }
    let q = i128::from(x).div_euclid(1i128 << (code & 0x1f));
    if code & 0x20 != 0 {
        -q
    } else {
        q
    }
}

fn clamp_i32(v: i128) -> i32 {
    v.clamp(i128::from(i32::MIN), i128::from(i32::MAX)) as i32
}

fn random_activation(rng: &mut Rng) -> i32 {
    match rng.below(16) {
        0 => [i32::MIN, i32::MAX, -1, 0, 1][rng.below(5)],
        1..=4 => rng.uniform(-65536.0 * 8.0, 65536.0 * 8.0) as i32,
        _ => rng.uniform(f64::from(i32::MIN), f64::from(i32::MAX) + 1.0).floor() as i32,
    }
}

fn criterion_6() -> Outcome {
    let fmt = FixedPointFormat::default();
    let mut rng = Rng::new(6);
    let mut codes_seen = BTreeSet::new();
    let mut terms = 0usize;
    let mut mismatches = Vec::new();
    // Matmul: 250 instances of 8×25 by 20×25, 4000 products each.
    for inst in 0..250 {
        let (m, k, n) = (8, 25, 20);
        let x: Vec<i32> = (0..m * k).map(|_| random_activation(&mut rng)).collect();
        let codes: Vec<u8> = (0..n * k).map(|_| rng.below(64) as u8).collect();
        let b: Vec<i32> = (0..n).map(|_| random_activation(&mut rng)).collect();
        codes_seen.extend(codes.iter().copied());
        let xt = FixedTensor::new(&[m, k], x.clone(), fmt).unwrap();
        let w = PackedShiftTensor::from_codes(&[n, k], &codes).unwrap();
        let bt = FixedTensor::new(&[n], b.clone(), fmt).unwrap();
        let got = shift_matmul(&xt, &w, &bt).unwrap();
        if got != multiply_matmul(&xt, &w, &bt).unwrap() {
            mismatches.push(format!("matmul #{inst} differs from the multiply kernel"));
        }
        for i in 0..m {
            for j in 0..n {
                let acc: i128 = i128::from(b[j])
                    + (0..k)
                        .map(|kk| reference_term(x[i * k + kk], codes[j * k + kk]))
                        .sum::<i128>();
                if got.out.data()[i * n + j] != clamp_i32(acc) {
                    mismatches.push(format!("matmul #{inst} [{i},{j}]"));
                }
            }
        }
        terms += m * k * n;
    }
    // Conv: direct six-loop oracle with explicit zero padding.
    let mut conv_terms = 0usize;
    for inst in 0..100 {
        let (c, f, h, stride, padding) = (1 + rng.below(3), 1 + rng.below(4), 6 + rng.below(3), 1, rng.below(2));
        let x: Vec<i32> = (0..2 * c * h * h).map(|_| random_activation(&mut rng)).collect();
        let codes: Vec<u8> = (0..f * c * 9).map(|_| rng.below(64) as u8).collect();
        let b: Vec<i32> = (0..f).map(|_| random_activation(&mut rng)).collect();
        codes_seen.extend(codes.iter().copied());
        let g = ConvGeometry::new(&[2, c, h, h], &[f, c, 3, 3], stride, padding).unwrap();
        let y = shift_conv2d(
            &FixedTensor::new(&[2, c, h, h], x.clone(), fmt).unwrap(),
            &PackedShiftTensor::from_codes(&[f, c, 3, 3], &codes).unwrap(),
            &FixedTensor::new(&[f], b.clone(), fmt).unwrap(),
            stride,
            padding,
        )
        .unwrap();
        let (oh, ow) = (g.out_h, g.out_w);
        for n in 0..2 {
            for ff in 0..f {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = i128::from(b[ff]);
                        for cc in 0..c {
                            for ki in 0..3 {
                                for kj in 0..3 {
                                    let (yy, xx) = (
                                        (oy + ki) as isize - padding as isize,
                                        (ox + kj) as isize - padding as isize,
                                    );
                                    if yy < 0 || xx < 0 || yy >= h as isize || xx >= h as isize {
                                        continue;
                                    }
                                    let xv = x[((n * c + cc) * h + yy as usize) * h + xx as usize];
                                    acc += reference_term(xv, codes[((ff * c + cc) * 3 + ki) * 3 + kj]);
                                    conv_terms += 1;
                                }
                            }
                        }
                        if y.out.data()[((n * f + ff) * oh + oy) * ow + ox] != clamp_i32(acc) {
                            mismatches.push(format!("conv #{inst}"));
                        }
                    }
                }
            }
        }
    }
    // Exhaustive 6-bit code space.
    let all: Vec<u8> = (0..64).collect();
    let packed = PackedShiftTensor::from_codes(&[64], &all).unwrap();
    let (repacked, report) = PackedShiftTensor::pack(&packed.unpack());
    let roundtrip = packed.codes() == all
        && repacked == packed
        && report.saturated == 0
        && report.flushed == 0
        && PackedShiftTensor::from_bytes(&[64], packed.as_bytes().to_vec()).unwrap() == packed;
    let magnitudes: BTreeSet<u8> = codes_seen.iter().map(|c| c & 0x1f).collect();
    let signs: BTreeSet<bool> = codes_seen
        .iter()
        .filter(|&&c| c != SENTINEL)
        .map(|c| c & 0x20 != 0)
        .collect();
    let detail = format!(
        "{terms} matmul + {conv_terms} conv product terms, {} magnitudes, {} signs; 64-code roundtrip {}",
        magnitudes.len(),
        signs.len(),
        if roundtrip { "exact" } else { "BROKEN" }
    );
    let ok = mismatches.is_empty()
        && roundtrip
        && terms + conv_terms >= 1_000_000
        && magnitudes.len() == 32
        && signs.len() == 2;
    if ok {
        pass(detail)
    } else {
        fail(format!(
            "{detail}; {} mismatches {:?}",
            mismatches.len(),
            mismatches.first()
        ))
    }
}

// ---- criteria 7 and 8: live CLI checks ---------------------------------

fn shift_kernel_agreement(mode: &str, data: &Path) -> Outcome {
    let ck = fc_checkpoint(mode);
    if !ck.exists() {
        return fail(format!("{} missing", ck.display()));
    }
    let (code, out, err) = run(&[
        "eval",
        ck.to_str().unwrap(),
        "--engine",
        "shift-kernel",
        "--compare-float",
        "--json",
        "--data-dir",
        data.to_str().unwrap(),
    ]);
    if code != 0 {
        return fail(format!("{mode}: eval exited {code}: {err}"));
    }
    let v: serde_json::Value = match serde_json::from_str(&out) {
        Ok(v) => v,
        Err(e) => return fail(format!("{mode}: bad eval output: {e}")),
    };
    let (acc, float, agree, total) = (
        v["accuracy"].as_f64().unwrap_or(f64::NAN),
        v["float_accuracy"].as_f64().unwrap_or(f64::NAN),
        v["agreement"].as_f64().unwrap_or(f64::NAN),
        v["total"].as_u64().unwrap_or(0),
    );
    // Weights the 6-bit format cannot hold explain most disagreements.
    let tmp = tempfile::tempdir().unwrap();
    let packed = tmp.path().join("fc.dspk");
    let saturated = run(&[
        "pack",
        ck.to_str().unwrap(),
        "--out",
        packed.to_str().unwrap(),
        "--json",
    ])
    .1
    .parse::<serde_json::Value>()
    .ok()
    .and_then(|p| p["saturated"].as_u64());
    Outcome {
        pass: total == 10_000 && agree >= 99.5 && (acc - float).abs() <= 0.3,
        detail: format!(
            "{mode}: {total} images, agreement {agree:.2}%, shift-kernel {acc:.2}% vs float {float:.2}%, {} weights saturated by packing",
            saturated.map_or("?".into(), |n| n.to_string())
        ),
    }
}

/// Both shift modes of the trained FC must pass.
fn criterion_7() -> Outcome {
    let Some(data) = mnist_dir() else {
        return fail("MNIST not found (set DEEPSHIFT_DATA or populate data/mnist)");
    };
    let parts: Vec<Outcome> = SHIFT_MODES.iter().map(|m| shift_kernel_agreement(m, &data)).collect();
    Outcome {
        pass: parts.iter().all(|o| o.pass),
        detail: format!(
            "need agreement ≥ 99.5% and |Δtop1| ≤ 0.3; {}",
            parts.iter().map(|o| o.detail.as_str()).collect::<Vec<_>>().join("; ")
        ),
    }
}

fn criterion_8() -> Outcome {
    let ck = fc_checkpoint("deepshift_ps");
    if !ck.exists() {
        return fail(format!("{} missing", ck.display()));
    }
    let tmp = tempfile::tempdir().unwrap();
    let out_path = tmp.path().join("fc.dspk");
    let (code, out, err) = run(&[
        "pack",
        ck.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
        "--json",
    ]);
    if code != 0 {
        return fail(format!("pack exited {code}: {err}"));
    }
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    let weights = v["weights"].as_u64().unwrap();
    let packed = v["packed_weight_bytes"].as_u64().unwrap();
    let float32 = v["float32_weight_bytes"].as_u64().unwrap();
    // 32/6 exactly: 6·packed_bits == 32·... expressed in integers.
    let exact = float32 == 4 * weights && packed * 8 == weights * 6 && float32 * 6 == packed * 32;
    let ratio = v["ratio"].as_f64().unwrap();
    Outcome {
        pass: exact && format!("{ratio:.2}") == "5.33",
        detail: format!(
            "{weights} weights: {packed} bytes packed vs {float32} bytes at 32 bits, ratio {ratio:.4} (32/6 = {:.4})",
            32.0 / 6.0
        ),
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("MNIST Simple FC from scratch", criterion_1),
        ("MNIST Simple CNN from scratch", criterion_2),
        ("Simple CNN converted from a trained baseline", criterion_3),
        ("power-of-two weights after every epoch", criterion_4),
        ("gradient oracles", criterion_5),
        ("shift kernels vs multiply oracle, 6-bit roundtrip", criterion_6),
        ("shift-kernel engine on MNIST", criterion_7),
        ("6-bit packing compression", criterion_8),
    ];
    let mut failed = 0;
    for (i, (title, f)) in criteria.iter().enumerate() {
        let o = f();
        failed += usize::from(!o.pass);
        println!(
            "criterion {} {}: {title}: {}",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!(
        "acceptance: {} of {} criteria pass",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 && std::env::var("DEEPSHIFT_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
