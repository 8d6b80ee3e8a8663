//! Timing of the shift-add kernel against an integer-multiply kernel and a
//! double-precision GEMM on identical shapes.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::linalg::matmul_nt;
use crate::rng::Rng;
use crate::shift::FixedPointFormat;
use crate::tensor::Tensor;

use super::fixed::FixedTensor;
use super::ops::{multiply_matmul, shift_matmul};
use super::packed::PackedShiftTensor;

pub const CSV_HEADER: &str = "kernel,shape,reps,median_ns,checksum";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchRow {
    pub kernel: &'static str,
    /// `MxNxK`: batch, outputs, reduction length.
    pub shape: String,
    pub reps: usize,
    pub median_ns: u128,
    /// Wrapping sum of the output codes; equal across kernels that agree.
    pub checksum: i64,
}

impl BenchRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.kernel, self.shape, self.reps, self.median_ns, self.checksum
        )
    }
}

/// Parses `"512x784,512x512"` into `(outputs, inputs)` weight shapes.
pub fn parse_shapes(s: &str) -> Result<Vec<(usize, usize)>> {
    s.split(',')
        .map(|part| {
            let bad = || Error::InvalidArgument(format!("bad shape {part:?}, expected NxK"));
            let (n, k) = part.trim().split_once('x').ok_or_else(bad)?;
            let n: usize = n.parse().map_err(|_| bad())?;
            let k: usize = k.parse().map_err(|_| bad())?;
            if n == 0 || k == 0 {
                return Err(bad());
            }
            Ok((n, k))
        })
        .collect()
}

fn checksum(codes: &[i32]) -> i64 {
    codes.iter().fold(0i64, |a, &v| a.wrapping_add(i64::from(v)))
}

fn median_ns(reps: usize, mut f: impl FnMut()) -> u128 {
    let mut t: Vec<u128> = (0..reps)
        .map(|_| {
            let start = Instant::now();
            f();
            start.elapsed().as_nanos()
        })
        .collect();
    t.sort_unstable();
    t[t.len() / 2]
}

/// One row per `(shape, kernel)`. Inputs are random; the shift and multiply
/// kernels must agree bit for bit before anything is timed.
pub fn bench(shapes: &[(usize, usize)], batch: usize, reps: usize, seed: u64) -> Result<Vec<BenchRow>> {
    if reps < 1 {
        return Err(Error::InvalidArgument("reps must be ≥ 1".into()));
    }
    if batch < 1 {
        return Err(Error::InvalidArgument("batch must be ≥ 1".into()));
    }
    let fmt = FixedPointFormat::default();
    let mut rng = Rng::new(seed);
    let mut rows = Vec::new();
    for &(n, k) in shapes {
        let x = FixedTensor::from_real(&rng.uniform_tensor::<f64>(&[batch, k], -4.0, 4.0), fmt);
        let codes: Vec<u8> = (0..n * k).map(|_| rng.below(64) as u8).collect();
        let w = PackedShiftTensor::from_codes(&[n, k], &codes)?;
        let b = FixedTensor::from_real(&rng.uniform_tensor::<f64>(&[n], -1.0, 1.0), fmt);
        let shift = shift_matmul(&x, &w, &b)?;
        let mult = multiply_matmul(&x, &w, &b)?;
        if shift != mult {
            return Err(Error::Contract(format!(
                "shift and multiply kernels disagree on {n}x{k}"
            )));
        }
        let xf: Tensor = x.to_real();
        let wf: Tensor = w.unpack().materialize();
        let bf: Tensor = b.to_real();
        let float = matmul_nt(&xf, &wf)?.add(&bf)?;
        let float_codes: Vec<i32> = float.data().iter().map(|&v| fmt.to_code(v)).collect();
        let shape = format!("{batch}x{n}x{k}");
        let mut row = |kernel, ns, sum| {
            rows.push(BenchRow {
                kernel,
                shape: shape.clone(),
                reps,
                median_ns: ns,
                checksum: sum,
            })
        };
        let ns = median_ns(reps, || {
            std::hint::black_box(shift_matmul(&x, &w, &b).unwrap());
        });
        row("shift", ns, checksum(shift.out.data()));
        let ns = median_ns(reps, || {
            std::hint::black_box(multiply_matmul(&x, &w, &b).unwrap());
        });
        row("multiply", ns, checksum(mult.out.data()));
        let ns = median_ns(reps, || {
            std::hint::black_box(matmul_nt(&xf, &wf).unwrap().add(&bf).unwrap());
        });
        row("float64", ns, checksum(&float_codes));
    }
    Ok(rows)
}
