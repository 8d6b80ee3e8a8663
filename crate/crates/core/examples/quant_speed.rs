use deepshift::shift::{quantize_ps, quantize_q};
use deepshift::Rng;
use std::time::Instant;

fn main() {
    let mut rng = Rng::new(1);
    let w = rng.normal_tensor::<f64>(&[512, 784], 0.0, 0.05);
    let s = rng.uniform_tensor::<f64>(&[512, 784], -1.0, 1.0);
    let reps = 50;
    let t = Instant::now();
    for _ in 0..reps {
        std::hint::black_box(quantize_q(&w));
    }
    println!("quantize_q {:.3} ms", t.elapsed().as_secs_f64() * 1e3 / reps as f64);
    let q = quantize_q(&w);
    let t = Instant::now();
    for _ in 0..reps {
        std::hint::black_box(q.materialize::<f64>());
    }
    println!("materialize {:.3} ms", t.elapsed().as_secs_f64() * 1e3 / reps as f64);
    let t = Instant::now();
    for _ in 0..reps {
        std::hint::black_box(quantize_ps(&w, &s).unwrap());
    }
    println!("quantize_ps {:.3} ms", t.elapsed().as_secs_f64() * 1e3 / reps as f64);
}
