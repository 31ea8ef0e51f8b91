//! Relationship position encoding: pairwise PSNR between the images of a batch.
//!
//! The encoding is a fixed function of pixels and never carries gradient.
//! Images are expected in `[0, 1]` with a global pixel ceiling, which keeps
//! the matrix symmetric.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};
use crate::numcore::{Scalar, Tensor};

pub const DEFAULT_EPS: f64 = 1e-8;
pub const DEFAULT_MAX_VALUE: f64 = 1.0;

/// Mean squared error between two equally shaped images, accumulated in f64.
pub fn image_mse<T: Scalar>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            op: "image_mse",
            lhs: vec![a.len()],
            rhs: vec![b.len()],
        });
    }
    if a.is_empty() {
        return Err(Error::Empty("image_mse"));
    }
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x.f64() - y.f64();
            d * d
        })
        .sum();
    Ok(sum / a.len() as f64)
}

/// `20 log10(max / (sqrt(mse) + eps))`.
pub fn psnr_from_mse(mse: f64, eps: f64, max_value: f64) -> f64 {
    20.0 * (max_value / (mse.sqrt() + eps)).log10()
}

pub fn psnr_similarity<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, eps: f64, max_value: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op: "psnr_similarity",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(psnr_from_mse(image_mse(a.data(), b.data())?, eps, max_value))
}

/// `B×B` matrix of pairwise similarities in decibels (or `[0, 1]` when
/// normalized).
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    pub values: Tensor<f64>,
    pub eps: f64,
    pub max_value: f64,
}

impl SimilarityMatrix {
    pub fn batch_size(&self) -> usize {
        self.values.shape()[0]
    }

    /// Self-similarity of any image: `20 log10(max / eps)`.
    pub fn diagonal_value(&self) -> f64 {
        psnr_from_mse(0.0, self.eps, self.max_value)
    }

    /// All-zero matrix, used when the encoding is switched off.
    pub fn zeros(batch: usize) -> SimilarityMatrix {
        SimilarityMatrix {
            values: Tensor::zeros(&[batch, batch]),
            eps: DEFAULT_EPS,
            max_value: DEFAULT_MAX_VALUE,
        }
    }

    /// Values multiplied by `scale` and cast to the model precision.
    pub fn scaled<T: Scalar>(&self, scale: f64) -> Tensor<T> {
        self.values.map(|v| v * scale).cast()
    }
}

/// Computes similarity matrices and counts how often it was asked to.
#[derive(Debug)]
pub struct RpeEncoder {
    pub eps: f64,
    pub max_value: f64,
    pub normalize: bool,
    calls: AtomicUsize,
}

impl Default for RpeEncoder {
    fn default() -> Self {
        RpeEncoder::new(DEFAULT_EPS, DEFAULT_MAX_VALUE, false)
    }
}

impl Clone for RpeEncoder {
    fn clone(&self) -> Self {
        RpeEncoder::new(self.eps, self.max_value, self.normalize)
    }
}

impl RpeEncoder {
    pub fn new(eps: f64, max_value: f64, normalize: bool) -> RpeEncoder {
        RpeEncoder {
            eps,
            max_value,
            normalize,
            calls: AtomicUsize::new(0),
        }
    }

    /// Number of matrices computed so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    /// Pairwise similarities of `batch[B×C×H×W]`, evaluated once per unordered pair.
    pub fn similarity_matrix<T: Scalar>(&self, batch: &Tensor<T>) -> Result<SimilarityMatrix> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        similarity_matrix(batch, self.eps, self.max_value, self.normalize)
    }
}

pub fn similarity_matrix<T: Scalar>(
    batch: &Tensor<T>,
    eps: f64,
    max_value: f64,
    normalize: bool,
) -> Result<SimilarityMatrix> {
    if !(eps > 0.0 && max_value > 0.0) {
        return Err(Error::Invalid(format!(
            "similarity needs eps > 0 and max_value > 0, got {eps} and {max_value}"
        )));
    }
    if batch.rank() < 2 {
        return Err(Error::Rank {
            op: "similarity_matrix",
            expected: 4,
            shape: batch.shape().to_vec(),
        });
    }
    let b = batch.shape()[0];
    if b == 0 {
        return Err(Error::Empty("similarity_matrix"));
    }
    let per: usize = batch.shape()[1..].iter().product();
    let img = |i: usize| &batch.data()[i * per..(i + 1) * per];
    let mut values = vec![0.0f64; b * b];
    for i in 0..b {
        for j in i..b {
            let s = psnr_from_mse(image_mse(img(i), img(j))?, eps, max_value);
            values[i * b + j] = s;
            values[j * b + i] = s;
        }
    }
    if normalize {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = hi - lo;
        for v in &mut values {
            *v = if range > 0.0 { (*v - lo) / range } else { 1.0 };
        }
    }
    Ok(SimilarityMatrix {
        values: Tensor::new(&[b, b], values)?,
        eps,
        max_value,
    })
}
