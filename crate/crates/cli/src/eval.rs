use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use deepshift::io::{load_mnist_split, load_packed, Checkpoint, Container};
use deepshift::kernel::IntegerNetwork;
use deepshift::nn::Model;
use deepshift::train::{evaluate, evaluate_integer, EvalReport};
use serde_json::json;

use crate::{data_dir, usage};

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Engine {
    /// Double-precision shift ops (or the ordinary layers in original mode).
    Float,
    /// Integer shift-add kernels on 6-bit packed weights.
    ShiftKernel,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Checkpoint (.ckpt) or packed model.
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "float")]
    engine: Engine,
    /// Also run the float engine and report prediction agreement.
    #[arg(long)]
    compare_float: bool,
    /// Evaluate only the first N test images.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    batch_size: usize,
    /// Machine-readable report on stdout.
    #[arg(long)]
    json: bool,
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

/// A loaded model file: a training checkpoint or a packed network.
pub enum ModelFile {
    Checkpoint(Box<Checkpoint>),
    Packed(Box<IntegerNetwork>),
}

pub fn load_model_file(path: &Path) -> Result<ModelFile> {
    let c = Container::load(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(match c.meta.get("kind").and_then(|k| k.as_str()) {
        Some("packed") => ModelFile::Packed(Box::new(load_packed(&c)?.0)),
        _ => ModelFile::Checkpoint(Box::new(Checkpoint::from_container(&c)?)),
    })
}

fn print_report(engine: &str, r: &EvalReport) {
    println!("engine {engine}");
    println!("top1 {:.2}", r.accuracy());
    println!("correct {}/{}", r.correct, r.total);
    println!("confusion (rows: true class, columns: predicted class)");
    println!(
        "   {}",
        (0..r.confusion.len()).map(|j| format!("{j:>6}")).collect::<String>()
    );
    for (i, row) in r.confusion.iter().enumerate() {
        println!("{i:>2} {}", row.iter().map(|v| format!("{v:>6}")).collect::<String>());
    }
}

pub fn run(a: EvalArgs) -> Result<()> {
    if a.batch_size == 0 {
        return Err(usage("--batch-size must be positive"));
    }
    let file = load_model_file(&a.checkpoint)?;
    let mut test = load_mnist_split(data_dir(a.data_dir.clone()), false).context("loading MNIST test set")?;
    if let Some(n) = a.limit {
        test = test.head(n);
    }
    let float_model = |file: &ModelFile| -> Result<Model> {
        match file {
            ModelFile::Checkpoint(ck) => Ok(ck.to_model()?),
            ModelFile::Packed(_) => bail!("a packed model has no float weights; use --engine shift-kernel"),
        }
    };
    let (report, float) = match a.engine {
        Engine::Float => {
            if a.compare_float {
                return Err(usage("--compare-float needs --engine shift-kernel"));
            }
            (evaluate(&float_model(&file)?, &test, a.batch_size)?, None)
        }
        Engine::ShiftKernel => {
            let net = match &file {
                ModelFile::Checkpoint(ck) => {
                    if !ck.meta.mode.is_shift() {
                        bail!(
                            "the shift-kernel engine needs a deepshift_q or deepshift_ps checkpoint; {} is {}",
                            a.checkpoint.display(),
                            ck.meta.mode
                        );
                    }
                    IntegerNetwork::from_model(&ck.to_model::<f64>()?)?.0
                }
                ModelFile::Packed(net) => (**net).clone(),
            };
            let report = evaluate_integer(&net, &test, a.batch_size)?;
            let float = if a.compare_float {
                Some(evaluate(&float_model(&file)?, &test, a.batch_size)?)
            } else {
                None
            };
            (report, float)
        }
    };
    let engine = match a.engine {
        Engine::Float => "float",
        Engine::ShiftKernel => "shift-kernel",
    };
    let agreement = float.as_ref().map(|f| {
        let same = f
            .predictions
            .iter()
            .zip(&report.predictions)
            .filter(|(x, y)| x == y)
            .count();
        100.0 * same as f64 / report.total.max(1) as f64
    });
    if a.json {
        let mut v = json!({
            "engine": engine,
            "accuracy": report.accuracy(),
            "correct": report.correct,
            "total": report.total,
            "loss": report.loss,
            "confusion": report.confusion,
        });
        if let (Some(f), Some(agree)) = (&float, agreement) {
            v["float_accuracy"] = json!(f.accuracy());
            v["agreement"] = json!(agree);
        }
        println!("{}", serde_json::to_string_pretty(&v)?);
    } else {
        print_report(engine, &report);
        if let (Some(f), Some(agree)) = (&float, agreement) {
            println!("float top1 {:.2}", f.accuracy());
            println!("agreement {agree:.2}");
        }
    }
    Ok(())
}
