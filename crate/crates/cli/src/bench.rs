use anyhow::Result;
use clap::Args;
use deepshift::kernel::bench::{bench, parse_shapes, CSV_HEADER};

use crate::usage;

#[derive(Args)]
pub struct BenchArgs {
    /// Weight shapes as OUTxIN, comma separated.
    #[arg(long, default_value = "512x784,512x512,10x512")]
    shapes: String,
    /// Rows of the activation matrix.
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 20)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

pub fn run(a: BenchArgs) -> Result<()> {
    if a.reps == 0 {
        return Err(usage("reps must be ≥ 1"));
    }
    let shapes = parse_shapes(&a.shapes).map_err(|e| usage(e.to_string()))?;
    let rows = bench(&shapes, a.batch, a.reps, a.seed)?;
    println!("{CSV_HEADER}");
    for r in &rows {
        println!("{}", r.csv_row());
    }
    for chunk in rows.chunks(3) {
        let ns = |k: &str| chunk.iter().find(|r| r.kernel == k).map(|r| r.median_ns as f64);
        if let (Some(s), Some(m), Some(f)) = (ns("shift"), ns("multiply"), ns("float64")) {
            eprintln!(
                "{}: shift/multiply {:.2}, shift/float64 {:.2}",
                chunk[0].shape,
                s / m,
                s / f
            );
        }
    }
    Ok(())
}
