use deepshift::linalg::gemm;
use std::time::Instant;

fn main() {
    for &(m, k, n) in &[(64usize, 784usize, 512usize), (50, 500, 4096), (64, 512, 512)] {
        let a: Vec<f64> = (0..m * k).map(|i| (i % 7) as f64 * 0.1).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i % 5) as f64 * 0.1).collect();
        let mut c = vec![0.0; m * n];
        let t = Instant::now();
        let reps = 20;
        for _ in 0..reps {
            gemm(m, n, k, &a, &b, &mut c);
        }
        let s = t.elapsed().as_secs_f64() / reps as f64;
        println!(
            "{m}x{k}x{n}: {:.3} ms, {:.2} GFLOP/s",
            s * 1e3,
            2.0 * (m * k * n) as f64 / s / 1e9
        );
    }
}
