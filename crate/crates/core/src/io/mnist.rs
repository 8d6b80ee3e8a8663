//! MNIST in IDX format.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

use super::container::io_err;

pub const MNIST_MEAN: f64 = 0.1307;
pub const MNIST_STD: f64 = 0.3081;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// File names of the standard distribution.
pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// Normalized images `[N, 1, rows, cols]` with their class labels.
#[derive(Debug, Clone)]
pub struct Dataset<T: Real = f64> {
    images: Tensor<T>,
    labels: Vec<u8>,
}

/// Maps a raw pixel to `(p/255 − mean)/std`.
pub fn normalize_pixel(raw: u8) -> f64 {
    (f64::from(raw) / 255.0 - MNIST_MEAN) / MNIST_STD
}

impl<T: Real> Dataset<T> {
    pub fn new(images: Tensor<T>, labels: Vec<u8>) -> Result<Self> {
        if images.rank() != 4 || images.dim(0) != labels.len() {
            return Err(Error::Inconsistent(format!(
                "{} labels for images of shape {:?}",
                labels.len(),
                images.shape()
            )));
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor<T> {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    fn sample_len(&self) -> usize {
        self.images.shape()[1..].iter().product()
    }

    /// Gathers the samples at `indices` into one batch.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<T>, Vec<usize>) {
        let n = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * n..(i + 1) * n]);
        }
        let mut shape = self.images.shape().to_vec();
        shape[0] = indices.len();
        let x = Tensor::new(&shape, data).expect("batch shape");
        (x, indices.iter().map(|&i| usize::from(self.labels[i])).collect())
    }

    /// The first `n` samples (all of them if `n` exceeds the length).
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.len());
        let idx: Vec<usize> = (0..n).collect();
        let (images, _) = self.batch(&idx);
        Self {
            images,
            labels: self.labels[..n].to_vec(),
        }
    }
}

fn be_u32(buf: &[u8], at: usize, what: &str) -> Result<u32> {
    buf.get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::UnexpectedEof(what.to_string()))
}

/// Parses an IDX3 image file into raw pixels, returning `(count, rows, cols, pixels)`.
pub fn parse_idx_images(buf: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = be_u32(buf, 0, "IDX image header")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format(format!("bad IDX image magic {magic:#010x}")));
    }
    let n = be_u32(buf, 4, "IDX image header")? as usize;
    let rows = be_u32(buf, 8, "IDX image header")? as usize;
    let cols = be_u32(buf, 12, "IDX image header")? as usize;
    let len = n * rows * cols;
    let pixels = buf
        .get(16..16 + len)
        .ok_or_else(|| Error::UnexpectedEof(format!("IDX image data ({len} pixels expected)")))?;
    Ok((n, rows, cols, pixels))
}

/// Parses an IDX1 label file.
pub fn parse_idx_labels(buf: &[u8]) -> Result<&[u8]> {
    let magic = be_u32(buf, 0, "IDX label header")?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format(format!("bad IDX label magic {magic:#010x}")));
    }
    let n = be_u32(buf, 4, "IDX label header")? as usize;
    buf.get(8..8 + n)
        .ok_or_else(|| Error::UnexpectedEof(format!("IDX label data ({n} labels expected)")))
}

/// Builds a normalized dataset from raw IDX bytes.
pub fn dataset_from_idx<T: Real>(images: &[u8], labels: &[u8]) -> Result<Dataset<T>> {
    let (n, rows, cols, pixels) = parse_idx_images(images)?;
    let labels = parse_idx_labels(labels)?;
    if labels.len() != n {
        return Err(Error::Inconsistent(format!("{n} images but {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 9) {
        return Err(Error::Inconsistent(format!("label {bad} outside 0..=9")));
    }
    let table: Vec<T> = (0..=255u8).map(|p| T::of(normalize_pixel(p))).collect();
    let data = pixels.iter().map(|&p| table[usize::from(p)]).collect();
    Dataset::new(Tensor::new(&[n, 1, rows, cols], data)?, labels.to_vec())
}

pub fn load_mnist_idx<T: Real>(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset<T>> {
    let read = |p: &Path| std::fs::read(p).map_err(|e| io_err(p, e));
    dataset_from_idx(&read(images_path.as_ref())?, &read(labels_path.as_ref())?)
}

/// Loads the training or test split from a directory holding the four
/// standard files.
pub fn load_mnist_split<T: Real>(dir: impl AsRef<Path>, train: bool) -> Result<Dataset<T>> {
    let dir = dir.as_ref();
    let (img, lab) = if train {
        (TRAIN_IMAGES, TRAIN_LABELS)
    } else {
        (TEST_IMAGES, TEST_LABELS)
    };
    load_mnist_idx(dir.join(img), dir.join(lab))
}
