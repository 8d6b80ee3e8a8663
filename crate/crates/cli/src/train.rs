use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use deepshift::io::{load_mnist_split, Checkpoint, Dataset};
use deepshift::nn::{Arch, InitConfig, Mode};
use deepshift::optim::OptimizerKind;
use deepshift::shift::FixedPointFormat;
use deepshift::train::{EpochMetrics, TrainConfig, Trainer};

use crate::{data_dir, usage};

#[derive(Args)]
pub struct TrainArgs {
    /// simple_fc or simple_cnn.
    #[arg(long, default_value = "simple_fc")]
    arch: String,
    /// original, deepshift_q or deepshift_ps.
    #[arg(long, default_value = "original")]
    mode: String,
    /// sgd or radam (default: radam for deepshift_ps, sgd otherwise).
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0.0)]
    momentum: f64,
    #[arg(long, default_value_t = 0.0)]
    weight_decay: f64,
    /// Total epochs; with --resume, the epoch to stop at.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Fixed-point width for shift layers.
    #[arg(long)]
    total_bits: Option<u32>,
    /// Fixed-point fraction bits for shift layers.
    #[arg(long)]
    fraction_bits: Option<u32>,
    /// Uniform range of the PS shift parameter at init, e.g. "-8,0".
    #[arg(long, allow_hyphen_values = true)]
    shift_init: Option<String>,
    /// Uniform range of the PS sign parameter at init, e.g. "-1,1".
    #[arg(long, allow_hyphen_values = true)]
    sign_init: Option<String>,
    /// Train on the first N training images.
    #[arg(long)]
    train_subset: Option<usize>,
    /// Continue from a checkpoint; its stored configuration is used.
    #[arg(long, conflicts_with_all = ["arch", "mode", "optimizer", "lr", "momentum", "weight_decay", "batch_size", "seed", "total_bits", "fraction_bits", "shift_init", "sign_init", "train_subset"])]
    resume: Option<PathBuf>,
    /// Output directory (default: runs/<arch>_<mode>_s<seed>).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

fn parse_range(s: &str, flag: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = s.split(',').collect();
    let bad = || usage(format!("--{flag} expects \"lo,hi\", got {s:?}"));
    if parts.len() != 2 {
        return Err(bad());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    if !(lo < hi) {
        return Err(bad());
    }
    Ok((lo, hi))
}

fn config_from_args(a: &TrainArgs) -> Result<TrainConfig> {
    let arch: Arch = a.arch.parse().map_err(|e| usage(format!("{e}")))?;
    let mode: Mode = a.mode.parse().map_err(|e| usage(format!("{e}")))?;
    let shift_flags =
        a.total_bits.is_some() || a.fraction_bits.is_some() || a.shift_init.is_some() || a.sign_init.is_some();
    if mode == Mode::Original && shift_flags {
        return Err(usage("fixed-point and init flags apply to shift modes only"));
    }
    if mode == Mode::DeepshiftQ && (a.shift_init.is_some() || a.sign_init.is_some()) {
        return Err(usage("--shift-init/--sign-init apply to deepshift_ps only"));
    }
    let mut c = TrainConfig::new(arch, mode);
    if let Some(o) = &a.optimizer {
        c.optimizer = o.parse::<OptimizerKind>().map_err(|e| usage(format!("{e}")))?;
    }
    c.lr = a.lr;
    c.momentum = a.momentum;
    c.weight_decay = a.weight_decay;
    c.epochs = a.epochs.unwrap_or(20);
    c.batch_size = a.batch_size;
    c.seed = a.seed;
    let d = FixedPointFormat::default();
    c.fixed_point = FixedPointFormat::new(
        a.total_bits.unwrap_or(d.total_bits),
        a.fraction_bits.unwrap_or(d.fraction_bits),
    )
    .map_err(|e| usage(format!("{e}")))?;
    let d = InitConfig::default();
    c.init = InitConfig {
        shift_range: a
            .shift_init
            .as_deref()
            .map(|s| parse_range(s, "shift-init"))
            .transpose()?
            .unwrap_or(d.shift_range),
        sign_range: a
            .sign_init
            .as_deref()
            .map(|s| parse_range(s, "sign-init"))
            .transpose()?
            .unwrap_or(d.sign_range),
    };
    c.train_subset = a.train_subset;
    c.validate().map_err(|e| usage(format!("{e}")))?;
    Ok(c)
}

/// Keeps the header and rows up to `epoch` of an existing metrics file.
fn truncated_metrics(path: &Path, epoch: usize) -> Result<Vec<String>> {
    let mut rows = vec![EpochMetrics::CSV_HEADER.to_string()];
    if let Ok(text) = fs::read_to_string(path) {
        for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
            if EpochMetrics::parse_csv_row(line)?.epoch <= epoch {
                rows.push(line.to_string());
            }
        }
    }
    Ok(rows)
}

pub fn load_data(dir: &Path, subset: Option<usize>) -> Result<(Dataset, Dataset)> {
    let train =
        load_mnist_split(dir, true).with_context(|| format!("loading MNIST training set from {}", dir.display()))?;
    let test =
        load_mnist_split(dir, false).with_context(|| format!("loading MNIST test set from {}", dir.display()))?;
    let train = match subset {
        Some(n) => train.head(n),
        None => train,
    };
    Ok((train, test))
}

pub fn run(a: TrainArgs) -> Result<()> {
    let mut trainer: Trainer = match &a.resume {
        Some(path) => {
            let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
            let mut tr = ck.into_trainer()?;
            if let Some(e) = a.epochs {
                tr.config.epochs = e;
            }
            tr
        }
        None => Trainer::new(config_from_args(&a)?)?,
    };
    let c = trainer.config.clone();
    let out = a
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("runs/{}_{}_s{}", c.arch, c.mode, c.seed)));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.json"), serde_json::to_string_pretty(&c)?)?;
    let (train, test) = load_data(&data_dir(a.data_dir.clone()), c.train_subset)?;

    let metrics_path = out.join("metrics.csv");
    let rows = truncated_metrics(&metrics_path, trainer.epoch)?;
    fs::write(&metrics_path, rows.join("\n") + "\n")?;
    let mut csv = fs::OpenOptions::new().append(true).open(&metrics_path)?;
    eprintln!(
        "training {} {} ({:?}, lr {}, batch {}, seed {}) on {} images, epochs {}..={}",
        c.arch,
        c.mode,
        c.optimizer,
        c.lr,
        c.batch_size,
        c.seed,
        train.len(),
        trainer.epoch + 1,
        c.epochs
    );
    println!("{}", EpochMetrics::CSV_HEADER);
    while trainer.epoch < c.epochs {
        let m = trainer.run_epoch(&train, &test)?;
        let row = m.csv_row();
        println!("{row}");
        writeln!(csv, "{row}")?;
        csv.flush()?;
        let ck = Checkpoint::from_trainer(&trainer);
        if trainer.is_best(&m) {
            ck.save(out.join("best.ckpt"), true)?;
        }
        ck.save(out.join("last.ckpt"), false)?;
    }
    eprintln!(
        "best val_acc {:.2}% ; outputs in {}",
        trainer.best_val_acc.unwrap_or(f64::NAN),
        out.display()
    );
    Ok(())
}
