use deepshift::autograd::Tape;
use deepshift::linalg::{conv2d, conv2d_backward, maxpool2d};
use deepshift::nn::{Arch, InitConfig, Mode, Model};
use deepshift::shift::FixedPointFormat;
use deepshift::Rng;
use std::time::Instant;

fn time<R>(label: &str, reps: usize, mut f: impl FnMut() -> R) {
    let t = Instant::now();
    for _ in 0..reps {
        std::hint::black_box(f());
    }
    println!("{label}: {:.3} ms", t.elapsed().as_secs_f64() * 1e3 / reps as f64);
}

fn main() {
    let mut rng = Rng::new(1);
    let x1 = rng.normal_tensor::<f64>(&[64, 1, 28, 28], 0.0, 1.0);
    let w1 = rng.normal_tensor::<f64>(&[20, 1, 5, 5], 0.0, 0.1);
    let x2 = rng.normal_tensor::<f64>(&[64, 20, 12, 12], 0.0, 1.0);
    let w2 = rng.normal_tensor::<f64>(&[50, 20, 5, 5], 0.0, 0.1);
    let y1 = conv2d(&x1, &w1, 1, 0).unwrap();
    let y2 = conv2d(&x2, &w2, 1, 0).unwrap();
    time("conv1 fwd", 20, || conv2d(&x1, &w1, 1, 0).unwrap());
    time("conv1 bwd w", 20, || {
        conv2d_backward(&x1, &w1, &y1, 1, 0, false, true).unwrap()
    });
    time("conv2 fwd", 20, || conv2d(&x2, &w2, 1, 0).unwrap());
    time("conv2 bwd x", 20, || {
        conv2d_backward(&x2, &w2, &y2, 1, 0, true, false).unwrap()
    });
    time("conv2 bwd w", 20, || {
        conv2d_backward(&x2, &w2, &y2, 1, 0, false, true).unwrap()
    });
    time("maxpool1", 20, || maxpool2d(&y1, 2).unwrap());
    for mode in [Mode::Original, Mode::DeepshiftQ, Mode::DeepshiftPs] {
        let m = Model::<f64>::build(
            Arch::SimpleCnn,
            mode,
            FixedPointFormat::default(),
            &InitConfig::default(),
            &mut rng,
        )
        .unwrap();
        let labels: Vec<usize> = (0..64).map(|i| i % 10).collect();
        time(&format!("cnn step {mode}"), 10, || {
            let mut tape = Tape::new();
            let xv = tape.constant(x1.clone());
            let y = m.forward(&mut tape, xv, &mut Rng::new(0), true).unwrap();
            let l = tape.softmax_cross_entropy(y, &labels).unwrap();
            tape.backward(l).unwrap();
        });
        time(&format!("cnn fwd {mode}"), 10, || m.predict(&x1).unwrap());
    }
}
