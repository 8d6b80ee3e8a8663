//! Helpers shared by the CLI integration tests and the acceptance suite.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use deepshift::train::EpochMetrics;
use deepshift::Rng;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_deepshift"))
}

/// Runs the binary; returns `(exit code, stdout, stderr)`.
pub fn run(args: &[&str]) -> (i32, String, String) {
    let Output { status, stdout, stderr } = bin().args(args).output().expect("spawn deepshift");
    (
        status.code().unwrap_or(-1),
        String::from_utf8_lossy(&stdout).into_owned(),
        String::from_utf8_lossy(&stderr).into_owned(),
    )
}

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .canonicalize()
        .unwrap()
}

/// Real MNIST, if present: `$DEEPSHIFT_DATA` or `<repo>/data/mnist`.
pub fn mnist_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("DEEPSHIFT_DATA")
        .map(PathBuf::from)
        .unwrap_or_else(|| repo_root().join("data/mnist"));
    dir.join("t10k-images-idx3-ubyte").exists().then_some(dir)
}

fn idx_images(images: &[[u8; 784]]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&2051u32.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&28u32.to_be_bytes());
    out.extend_from_slice(&28u32.to_be_bytes());
    images.iter().for_each(|im| out.extend_from_slice(im));
    out
}

fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&2049u32.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Easy ten-class problem in MNIST IDX format: class `c` lights up a 6×6
/// block whose position depends on `c`, over random noise.
pub fn write_synthetic_mnist(dir: &Path, train: usize, test: usize, seed: u64) {
    fs::create_dir_all(dir).unwrap();
    let mut rng = Rng::new(seed);
    let mut make = |n: usize| {
        let mut images = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = (i % 10) as u8;
            let mut im = [0u8; 784];
            for p in im.iter_mut() {
                *p = rng.below(60) as u8;
            }
            let (y0, x0) = (2 + 12 * (usize::from(c) / 5), 1 + 5 * (usize::from(c) % 5));
            for y in y0..y0 + 6 {
                for x in x0..x0 + 5 {
                    im[y * 28 + x] = 200 + rng.below(56) as u8;
                }
            }
            images.push(im);
            labels.push(c);
        }
        (images, labels)
    };
    let (tri, trl) = make(train);
    let (tei, tel) = make(test);
    fs::write(dir.join("train-images-idx3-ubyte"), idx_images(&tri)).unwrap();
    fs::write(dir.join("train-labels-idx1-ubyte"), idx_labels(&trl)).unwrap();
    fs::write(dir.join("t10k-images-idx3-ubyte"), idx_images(&tei)).unwrap();
    fs::write(dir.join("t10k-labels-idx1-ubyte"), idx_labels(&tel)).unwrap();
}

pub fn read_metrics(path: &Path) -> Result<Vec<EpochMetrics>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut lines = text.lines();
    if lines.next() != Some(EpochMetrics::CSV_HEADER) {
        return Err(format!("{}: unexpected header", path.display()));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| EpochMetrics::parse_csv_row(l).map_err(|e| format!("{}: {e}", path.display())))
        .collect()
}

/// CSV text without the wall-clock column.
pub fn without_wall_clock(csv: &str) -> String {
    csv.lines()
        .map(|l| {
            let mut f: Vec<&str> = l.split(',').collect();
            if f.len() > 5 {
                f.remove(5);
            }
            f.join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}
