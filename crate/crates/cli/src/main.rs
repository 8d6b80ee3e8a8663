//! `deepshift` command-line tool.
//!
//! Exit codes: 0 on success, 1 for usage errors, 2 for runtime errors.

mod bench;
mod convert;
mod eval;
mod pack;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "deepshift",
    version,
    about = "Multiplication-free networks with power-of-two weights"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write metrics.csv, best.ckpt and last.ckpt.
    Train(train::TrainArgs),
    /// Top-1 accuracy and confusion counts on the MNIST test set.
    Eval(eval::EvalArgs),
    /// Convert a trained original-mode checkpoint for shift fine-tuning.
    Convert(convert::ConvertArgs),
    /// Write a 6-bit packed inference model and report the compression.
    Pack(pack::PackArgs),
    /// Time the shift-add kernel against multiply and float kernels (CSV).
    Bench(bench::BenchArgs),
}

/// Bad flag combination, reported with exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// `--data-dir`, then `$DEEPSHIFT_DATA`, then `./data/mnist`.
pub fn data_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("DEEPSHIFT_DATA").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data/mnist"))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Train(a) => train::run(a),
        Command::Eval(a) => eval::run(a),
        Command::Convert(a) => convert::run(a),
        Command::Pack(a) => pack::run(a),
        Command::Bench(a) => bench::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            eprintln!("run with --help for usage");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
