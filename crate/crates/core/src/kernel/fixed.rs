use crate::error::{shape_err, Result};
use crate::scalar::Real;
use crate::shift::FixedPointFormat;
use crate::tensor::Tensor;

/// Integer tensor on a fixed-point grid: element `e` stands for `e / 2^f`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedTensor {
    shape: Vec<usize>,
    data: Vec<i32>,
    fmt: FixedPointFormat,
}

impl FixedTensor {
    pub fn new(shape: &[usize], data: Vec<i32>, fmt: FixedPointFormat) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return shape_err(format!("fixed tensor of shape {shape:?} with {} elements", data.len()));
        }
        let (lo, hi) = (fmt.min_code(), fmt.max_code());
        if let Some(v) = data.iter().find(|&&v| i64::from(v) < lo || i64::from(v) > hi) {
            return Err(crate::Error::Domain(format!(
                "code {v} outside the {}-bit format",
                fmt.total_bits
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
            fmt,
        })
    }

    /// Nearest codes (ties away from zero), saturated.
    pub fn from_real<T: Real>(t: &Tensor<T>, fmt: FixedPointFormat) -> Self {
        Self {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|v| fmt.to_code(v.as_f64())).collect(),
            fmt,
        }
    }

    pub fn to_real<T: Real>(&self) -> Tensor<T> {
        let data = self.data.iter().map(|&c| T::of(self.fmt.from_code(c))).collect();
        Tensor::new(&self.shape, data).expect("shape checked at construction")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[i32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<i32> {
        self.data
    }

    pub fn fmt(&self) -> FixedPointFormat {
        self.fmt
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return shape_err(format!("cannot reshape {:?} to {shape:?}", self.shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn relu(mut self) -> Self {
        self.data.iter_mut().for_each(|v| *v = (*v).max(0));
        self
    }

    /// Non-overlapping `window × window` max pooling over an NCHW tensor.
    pub fn maxpool2d(&self, window: usize) -> Result<Self> {
        if self.shape.len() != 4 || window == 0 {
            return shape_err(format!("maxpool2d expects NCHW, got {:?}", self.shape));
        }
        let [n, c, h, w] = [self.shape[0], self.shape[1], self.shape[2], self.shape[3]];
        if h % window != 0 || w % window != 0 {
            return shape_err(format!("maxpool2d window {window} does not tile {h}x{w}"));
        }
        let (oh, ow) = (h / window, w / window);
        let mut out = Vec::with_capacity(n * c * oh * ow);
        for plane in self.data.chunks_exact(h * w) {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = i32::MIN;
                    for dy in 0..window {
                        let row = &plane[(oy * window + dy) * w + ox * window..][..window];
                        best = row.iter().fold(best, |a, &b| a.max(b));
                    }
                    out.push(best);
                }
            }
        }
        Ok(Self {
            shape: vec![n, c, oh, ow],
            data: out,
            fmt: self.fmt,
        })
    }

    /// Index of the largest entry in each row of a rank-2 tensor; the first
    /// one wins ties.
    pub fn argmax_rows(&self) -> Result<Vec<usize>> {
        if self.shape.len() != 2 || self.shape[1] == 0 {
            return shape_err(format!("argmax expects a non-empty matrix, got {:?}", self.shape));
        }
        Ok(self
            .data
            .chunks_exact(self.shape[1])
            .map(|row| {
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }
}
