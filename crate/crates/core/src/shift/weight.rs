use crate::error::{shape_err, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Quantized weight `S̃ · 2^P̃`: integer shift exponents and ternary signs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShiftWeight {
    shape: Vec<usize>,
    shift: Vec<i32>,
    sign: Vec<i8>,
}

/// Exponents are kept within this magnitude; anything beyond is zero or
/// infinite in every supported scalar type anyway.
const SHIFT_LIMIT: f64 = (1 << 20) as f64;

fn round_shift(p: f64) -> i32 {
    p.round().clamp(-SHIFT_LIMIT, SHIFT_LIMIT) as i32
}

impl ShiftWeight {
    pub fn new(shape: &[usize], shift: Vec<i32>, sign: Vec<i8>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shift.len() != n || sign.len() != n {
            return shape_err(format!(
                "shift weight of shape {shape:?} with {} shifts and {} signs",
                shift.len(),
                sign.len()
            ));
        }
        if let Some(s) = sign.iter().find(|s| !(-1..=1).contains(*s)) {
            return Err(crate::Error::Domain(format!("sign {s} is not ternary")));
        }
        Ok(Self {
            shape: shape.to_vec(),
            shift,
            sign,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn shifts(&self) -> &[i32] {
        &self.shift
    }

    pub fn signs(&self) -> &[i8] {
        &self.sign
    }

    pub fn len(&self) -> usize {
        self.shift.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shift.is_empty()
    }

    /// Dense `S̃ · 2^P̃`.
    pub fn materialize<T: Real>(&self) -> Tensor<T> {
        let data = self
            .shift
            .iter()
            .zip(&self.sign)
            .map(|(&p, &s)| {
                let mag = if s == 0 { T::zero() } else { T::pow2i(p) };
                if s < 0 {
                    -mag
                } else {
                    mag
                }
            })
            .collect();
        Tensor::new(&self.shape, data).expect("shape checked at construction")
    }
}

/// Mantissa bits of the `f64` nearest to `√2`.
const SQRT2_MANTISSA: u64 = 0x6a09_e667_f3bc_d;

/// `round(log₂|v|)` for nonzero `v`, equal to `round(v.abs().log2())`.
/// Normal values are decided by comparing the mantissa with `√2`. Near that
/// tie the rounding of `log2` itself matters (its ulp grows with the
/// exponent), so `log2` decides there, as it does for subnormal and
/// non-finite values.
fn round_log2(v: f64) -> i32 {
    let bits = v.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let mantissa = bits & ((1u64 << 52) - 1);
    let e = exp - 1023;
    let window = 16 + e.unsigned_abs();
    if exp == 0 || exp == 0x7ff || mantissa.abs_diff(SQRT2_MANTISSA) <= window {
        return round_shift(v.abs().log2());
    }
    (e + i64::from(mantissa > SQRT2_MANTISSA)) as i32
}

/// Rounds each weight to the nearest signed power of two in the log
/// domain: `S̃ = sign(W)`, `P̃ = round(log₂|W|)`. Zeros get `S̃ = 0, P̃ = 0`.
pub fn quantize_q<T: Real>(w: &Tensor<T>) -> ShiftWeight {
    let mut shift = Vec::with_capacity(w.numel());
    let mut signs = Vec::with_capacity(w.numel());
    for &v in w.data() {
        let v = v.as_f64();
        shift.push(if v == 0.0 { 0 } else { round_log2(v) });
        signs.push(i8::from(v > 0.0) - i8::from(v < 0.0));
    }
    ShiftWeight {
        shape: w.shape().to_vec(),
        shift,
        sign: signs,
    }
}

/// `P̃ = round(P)`, `S̃ = sign(round(S))`.
pub fn quantize_ps<T: Real>(p: &Tensor<T>, s: &Tensor<T>) -> Result<ShiftWeight> {
    if p.shape() != s.shape() {
        return shape_err(format!("shift {:?} and sign {:?} differ", p.shape(), s.shape()));
    }
    Ok(ShiftWeight {
        shape: p.shape().to_vec(),
        shift: p.data().iter().map(|v| round_shift(v.as_f64())).collect(),
        sign: s
            .data()
            .iter()
            .map(|&v| {
                let r = v.round();
                i8::from(r > T::zero()) - i8::from(r < T::zero())
            })
            .collect(),
    })
}

/// Counts elements that are neither zero nor an exact power of two.
pub fn count_non_pow2<T: Real>(t: &Tensor<T>) -> usize {
    t.data().iter().filter(|v| !v.is_zero_or_pow2()).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_f64(&[v.len()], v).unwrap()
    }

    #[test]
    fn q_examples() {
        assert!((0.3f64.log2() - (-1.737)).abs() < 1e-3);
        let sw = quantize_q(&t(&[0.3, -1.0, 0.0]));
        assert_eq!(sw.shifts(), &[-2, 0, 0]);
        assert_eq!(sw.signs(), &[1, -1, 0]);
        assert_eq!(sw.materialize::<f64>().data(), &[0.25, -1.0, 0.0]);
    }

    #[test]
    fn ps_examples() {
        let p = t(&[0.0, 0.0, 0.0, 0.0]);
        let sw = quantize_ps(&p, &t(&[-0.6, 0.49, 0.5, -0.3])).unwrap();
        assert_eq!(sw.signs(), &[-1, 0, 1, 0]);
        let sw = quantize_ps(&t(&[-1.2, 0.4]), &t(&[1.0, 1.0])).unwrap();
        assert_eq!(sw.shifts(), &[-1, 0]);
        // Ternary boundaries.
        let s = t(&[-0.5, -0.4999, 0.4999, 0.5, -7.0, 3.2]);
        let sw = quantize_ps(&Tensor::zeros(&[6]), &s).unwrap();
        assert_eq!(sw.signs(), &[-1, 0, 0, 1, -1, 1]);
        assert!(quantize_ps(&t(&[1.0]), &t(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn rejects_non_ternary_sign() {
        assert!(ShiftWeight::new(&[1], vec![0], vec![2]).is_err());
        assert!(ShiftWeight::new(&[2], vec![0], vec![1]).is_err());
    }

    #[test]
    fn far_out_exponents_stay_finite_or_zero() {
        let sw = ShiftWeight::new(&[2], vec![-5000, 5000], vec![1, -1]).unwrap();
        let m = sw.materialize::<f64>();
        assert_eq!(m.data()[0], 0.0);
        assert_eq!(count_non_pow2(&m), 1); // -inf is not a power of two
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20_000))]
        #[test]
        fn q_quantization_lands_on_powers_of_two(v in proptest::collection::vec(-4.0f64..4.0, 1..64)) {
            let w = t(&v);
            let m = quantize_q(&w).materialize::<f64>();
            prop_assert_eq!(count_non_pow2(&m), 0);
            // Nearest power of two in the log domain: |log2(w/w̃)| <= 1/2.
            for (a, b) in v.iter().zip(m.data()) {
                if *a != 0.0 {
                    prop_assert!((a.abs().log2() - b.abs().log2()).abs() <= 0.5 + 1e-12);
                    prop_assert!((a - b).abs() <= (2f64.sqrt() - 1.0) * b.abs() * (1.0 + 1e-12));
                }
            }
        }

        #[test]
        fn ps_quantization_lands_on_powers_of_two(
            p in proptest::collection::vec(-40.0f64..5.0, 8),
            s in proptest::collection::vec(-2.0f64..2.0, 8),
        ) {
            let sw = quantize_ps(&t(&p), &t(&s)).unwrap();
            prop_assert_eq!(count_non_pow2(&sw.materialize::<f64>()), 0);
            prop_assert_eq!(count_non_pow2(&sw.materialize::<f32>()), 0);
        }

        #[test]
        fn fast_log2_rounding_matches_log2(bits in any::<u64>()) {
            let v = f64::from_bits(bits);
            prop_assume!(v != 0.0 && !v.is_nan());
            prop_assert_eq!(round_log2(v), round_shift(v.abs().log2()));
        }

        #[test]
        fn fast_log2_rounding_near_the_tie(e in -1022i32..1023, d in -2048i64..2048, neg: bool) {
            let m = (SQRT2_MANTISSA as i64 + d) as u64;
            let v = f64::from_bits((((e + 1023) as u64) << 52) | m);
            let v = if neg { -v } else { v };
            prop_assert_eq!(round_log2(v), round_shift(v.abs().log2()));
        }
    }

    #[test]
    fn fast_log2_rounding_exhaustive_near_tie() {
        for e in -1022i64..=1023 {
            for d in -3000i64..=3000 {
                let m = (SQRT2_MANTISSA as i64 + d) as u64;
                let v = f64::from_bits((((e + 1023) as u64) << 52) | m);
                assert_eq!(round_log2(v), round_shift(v.log2()), "e={e} d={d}");
            }
        }
    }

    #[test]
    fn sqrt2_mantissa() {
        assert_eq!(std::f64::consts::SQRT_2.to_bits() & ((1u64 << 52) - 1), SQRT2_MANTISSA);
    }
}
