use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use deepshift::io::checkpoint::conversion_error;
use deepshift::io::{convert_model, load_mnist_split, Checkpoint};
use deepshift::nn::Mode;
use deepshift::train::evaluate;
use serde_json::json;

use crate::{data_dir, usage};

#[derive(Args)]
pub struct ConvertArgs {
    /// Trained original-mode checkpoint.
    checkpoint: PathBuf,
    /// deepshift_q (q) or deepshift_ps (ps).
    #[arg(long)]
    mode: String,
    /// Output checkpoint (default: <input stem>_<mode>.ckpt next to the input).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report test accuracy of the converted model before any fine-tuning.
    #[arg(long)]
    eval: bool,
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

pub fn run(a: ConvertArgs) -> Result<()> {
    let mode: Mode = a.mode.parse().map_err(|e| usage(format!("{e}")))?;
    if !mode.is_shift() {
        return Err(usage("--mode must be deepshift_q or deepshift_ps"));
    }
    let src = Checkpoint::load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let converted = convert_model(&src, mode)?;
    let out = a.out.clone().unwrap_or_else(|| {
        let stem = a.checkpoint.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
        a.checkpoint.with_file_name(format!("{stem}_{mode}.ckpt"))
    });
    converted.save(&out, false)?;
    let model = converted.to_model::<f64>()?;
    let mut summary = json!({
        "source": a.checkpoint.display().to_string(),
        "out": out.display().to_string(),
        "arch": converted.meta.arch,
        "mode": mode,
        "source_epoch": src.meta.epoch,
        "weights": model.shift_weights()?.iter().map(|(_, w)| w.len()).sum::<usize>(),
        "non_pow2_weights": model.count_non_pow2_weights()?,
        "max_relative_error": conversion_error(&src, &converted)?,
    });
    if a.eval {
        let test = load_mnist_split(data_dir(a.data_dir.clone()), false).context("loading MNIST test set")?;
        summary["source_accuracy"] = json!(evaluate(&src.to_model::<f64>()?, &test, 1000)?.accuracy());
        summary["converted_accuracy"] = json!(evaluate(&model, &test, 1000)?.accuracy());
    }
    println!("{}", serde_json::to_string_pretty(&summary)?);
    eprintln!("converted {} to {mode}: {}", a.checkpoint.display(), out.display());
    Ok(())
}
