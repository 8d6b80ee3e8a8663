//! Dense row-major n-dimensional tensor.

use std::fmt;

use crate::error::{shape_err, Error, Result};
use crate::scalar::Real;

/// Dense, contiguous, row-major tensor.
///
/// `shape.iter().product() == data.len()` always holds, and `strides` is the
/// row-major stride vector for `shape`. A rank-0 tensor holds one element.
#[derive(Clone, PartialEq)]
pub struct Tensor<T = f64> {
    shape: Vec<usize>,
    strides: Vec<usize>,
    data: Vec<T>,
}

pub(crate) fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// Numpy-style broadcast of two shapes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return shape_err(format!("cannot broadcast {a:?} with {b:?}")),
        };
    }
    Ok(out)
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return shape_err(format!("shape {shape:?} needs {n} elements, got {}", data.len()));
        }
        Ok(Self {
            shape: shape.to_vec(),
            strides: row_major_strides(shape),
            data,
        })
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            strides: row_major_strides(shape),
            data: vec![value; n],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self::full(&[], value)
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            strides: row_major_strides(shape),
            data: (0..n).map(&mut f).collect(),
        }
    }

    /// Builds a tensor from `f64` values, converting to `T`.
    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::of(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable view of the flat buffer. The length cannot change, so the
    /// shape invariant is preserved.
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn get(&self, index: &[usize]) -> T {
        debug_assert_eq!(index.len(), self.rank());
        let off: usize = index.iter().zip(&self.strides).map(|(i, s)| i * s).sum();
        self.data[off]
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!("item() on tensor of shape {:?}", self.shape)));
        }
        Ok(self.data[0])
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        self.clone().into_shape(shape)
    }

    pub fn into_shape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            strides: self.strides.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn map_inplace(&mut self, f: impl Fn(T) -> T) {
        for v in &mut self.data {
            *v = f(*v);
        }
    }

    /// Elementwise combination of two tensors of identical shape.
    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return shape_err(format!("elementwise op on {:?} and {:?}", self.shape, other.shape));
        }
        Ok(Self {
            shape: self.shape.clone(),
            strides: self.strides.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// Broadcasting binary op.
    pub fn broadcast_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape == other.shape {
            return self.zip_map(other, f);
        }
        let out_shape = broadcast_shape(&self.shape, &other.shape)?;
        let rank = out_shape.len();
        // Trailing-suffix fast path: `other` repeats over leading blocks.
        let trimmed = trim_leading_ones(&other.shape);
        if self.shape == out_shape && out_shape.ends_with(trimmed) {
            let block = other.numel();
            let mut data = Vec::with_capacity(self.numel());
            for chunk in self.data.chunks(block) {
                data.extend(chunk.iter().zip(&other.data).map(|(&a, &b)| f(a, b)));
            }
            return Self::new(&out_shape, data);
        }
        let sa = broadcast_strides(&self.shape, &self.strides, rank);
        let sb = broadcast_strides(&other.shape, &other.strides, rank);
        let n: usize = out_shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut idx = vec![0usize; rank];
        let (mut oa, mut ob) = (0usize, 0usize);
        for _ in 0..n {
            data.push(f(self.data[oa], other.data[ob]));
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                oa += sa[ax];
                ob += sb[ax];
                if idx[ax] < out_shape[ax] {
                    break;
                }
                oa -= sa[ax] * idx[ax];
                ob -= sb[ax] * idx[ax];
                idx[ax] = 0;
            }
        }
        Self::new(&out_shape, data)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.broadcast_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.broadcast_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.broadcast_with(other, |a, b| a * b)
    }

    pub fn div(&self, other: &Self) -> Result<Self> {
        self.broadcast_with(other, |a, b| a / b)
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|v| v * k)
    }

    /// In-place `self += other` for equal shapes.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return shape_err(format!("accumulate {:?} into {:?}", other.shape, self.shape));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn exp(&self) -> Self {
        self.map(T::exp)
    }

    pub fn exp2(&self) -> Self {
        self.map(T::exp2)
    }

    /// Base-2 logarithm; every element must be strictly positive.
    pub fn log2(&self) -> Result<Self> {
        if let Some(v) = self.data.iter().find(|v| !(**v > T::zero())) {
            return Err(Error::Domain(format!("log2 of non-positive value {v}")));
        }
        Ok(self.map(T::log2))
    }

    pub fn abs(&self) -> Self {
        self.map(T::abs)
    }

    /// Sign with `sign(0) == 0`.
    pub fn sign(&self) -> Self {
        self.map(sign)
    }

    /// Rounds half away from zero.
    pub fn round(&self) -> Self {
        self.map(T::round)
    }

    pub fn clamp(&self, lo: T, hi: T) -> Self {
        self.map(|v| v.max(lo).min(hi))
    }

    pub fn relu(&self) -> Self {
        self.map(|v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn mean(&self) -> T {
        self.sum() / T::of(self.numel() as f64)
    }

    pub fn max(&self) -> T {
        self.data.iter().fold(T::neg_infinity(), |acc, &v| acc.max(v))
    }

    /// Flat index of the first maximum.
    pub fn argmax(&self) -> usize {
        argmax_slice(&self.data)
    }

    /// Per-row argmax of a 2-D tensor.
    pub fn argmax_rows(&self) -> Result<Vec<usize>> {
        if self.rank() != 2 {
            return shape_err(format!("argmax_rows on {:?}", self.shape));
        }
        let cols = self.shape[1];
        Ok(self.data.chunks(cols).map(argmax_slice).collect())
    }

    /// Reduces a broadcast result back to `shape` by summing the
    /// broadcast axes.
    pub fn sum_to_shape(&self, shape: &[usize]) -> Result<Self> {
        if self.shape == shape {
            return Ok(self.clone());
        }
        let target = broadcast_shape(shape, &self.shape)?;
        if target != self.shape {
            return shape_err(format!("cannot reduce {:?} to {shape:?}", self.shape));
        }
        let rank = self.rank();
        let target_strides = row_major_strides(shape);
        let st = broadcast_strides(shape, &target_strides, rank);
        let mut out = vec![T::zero(); shape.iter().product()];
        let mut idx = vec![0usize; rank];
        let mut o = 0usize;
        for &v in &self.data {
            out[o] += v;
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                o += st[ax];
                if idx[ax] < self.shape[ax] {
                    break;
                }
                o -= st[ax] * idx[ax];
                idx[ax] = 0;
            }
        }
        Self::new(shape, out)
    }

    pub fn transpose2d(&self) -> Result<Self> {
        if self.rank() != 2 {
            return shape_err(format!("transpose2d on {:?}", self.shape));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = Vec::with_capacity(r * c);
        for j in 0..c {
            out.extend((0..r).map(|i| self.data[i * c + j]));
        }
        Self::new(&[c, r], out)
    }

    /// Converts element type through `f64`.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            strides: self.strides.clone(),
            data: self.data.iter().map(|&v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub(crate) fn sign<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

pub(crate) fn argmax_slice<T: Real>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

fn trim_leading_ones(shape: &[usize]) -> &[usize] {
    let k = shape.iter().take_while(|&&d| d == 1).count();
    &shape[k..]
}

fn broadcast_strides(shape: &[usize], strides: &[usize], rank: usize) -> Vec<usize> {
    let pad = rank - shape.len();
    (0..rank)
        .map(|i| {
            if i < pad || shape[i - pad] == 1 {
                0
            } else {
                strides[i - pad]
            }
        })
        .collect()
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?} [", self.shape)?;
        for (i, v) in self.data.iter().take(SHOWN).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        if self.numel() > SHOWN {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}
