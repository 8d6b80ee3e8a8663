use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use deepshift::io::{save_packed, Checkpoint};
use serde_json::json;

#[derive(Args)]
pub struct PackArgs {
    /// DeepShift checkpoint.
    checkpoint: PathBuf,
    /// Output file (default: input with extension .dspk).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the summary as JSON only.
    #[arg(long)]
    json: bool,
}

pub fn run(a: PackArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let out = a.out.clone().unwrap_or_else(|| a.checkpoint.with_extension("dspk"));
    let s = save_packed(&ck, &out)?;
    let file_bytes = std::fs::metadata(&out)?.len();
    let v = json!({
        "out": out.display().to_string(),
        "weights": s.weights,
        "packed_weight_bytes": s.packed_bytes,
        "float32_weight_bytes": s.float32_bytes,
        "ratio": s.ratio(),
        "file_bytes": file_bytes,
        "saturated": s.saturated,
        "flushed": s.flushed,
    });
    if a.json {
        println!("{}", serde_json::to_string_pretty(&v)?);
        return Ok(());
    }
    println!("weights {}", s.weights);
    println!("packed weight payload {} bytes (6 bits/weight)", s.packed_bytes);
    println!("32-bit weight payload {} bytes", s.float32_bytes);
    println!("compression {:.2}x", s.ratio());
    println!("saturated {} flushed {}", s.saturated, s.flushed);
    println!("wrote {} ({file_bytes} bytes)", out.display());
    Ok(())
}
