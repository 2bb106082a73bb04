//! Dissimilarity-weighted L1 loss.
//!
//! Each 8x8 block of an image gets the weight `D / S` where `D` is the
//! block's structural dissimilarity `(1 - SSIM) / 2` and `S` a running
//! average of `D` over training. The weights are constants for
//! differentiation.

use thiserror::Error;

use crate::error::ShapeError;
use crate::tensor::{ensure_same, Scalar, Shape, Tensor};

pub const BLOCK: usize = 8;
pub const BASELINE_DECAY: f64 = 0.99;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("image {height}x{width} is not a multiple of {BLOCK}")]
    Dims { height: usize, width: usize },
    #[error("dissimilarity baseline is zero; update it with a batch before weighting")]
    Uninitialized,
    #[error("batch dissimilarity must be finite and non-negative, got {0}")]
    BadBatch(f64),
}

/// Per-block values laid out as `(batch, h/8, w/8, 1)`.
pub type BlockGrid = Tensor<f64>;

/// Dissimilarity of every non-overlapping 8x8 block, using one uniform
/// SSIM window per block and channel, averaged over channels.
///
/// Inputs are on the [0, 1] scale.
pub fn block_dssim<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Result<BlockGrid, LossError> {
    ensure_same(x.shape(), y.shape())?;
    let s = x.shape();
    if s.height() % BLOCK != 0 || s.width() % BLOCK != 0 {
        return Err(LossError::Dims { height: s.height(), width: s.width() });
    }
    let grid = Shape::new(s.batch(), s.height() / BLOCK, s.width() / BLOCK, 1);
    let n = (BLOCK * BLOCK) as f64;
    let mut out = Tensor::zeros(grid);
    for b in 0..s.batch() {
        for by in 0..grid.height() {
            for bx in 0..grid.width() {
                let mut total = 0.0;
                for c in 0..s.channels() {
                    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for yy in by * BLOCK..(by + 1) * BLOCK {
                        for xx in bx * BLOCK..(bx + 1) * BLOCK {
                            let p = x.at(b, yy, xx, c).as_f64();
                            let q = y.at(b, yy, xx, c).as_f64();
                            sx += p;
                            sy += q;
                            sxx += p * p;
                            syy += q * q;
                            sxy += p * q;
                        }
                    }
                    let (mx, my) = (sx / n, sy / n);
                    let vx = (sxx / n - mx * mx).max(0.0);
                    let vy = (syy / n - my * my).max(0.0);
                    let cov = sxy / n - mx * my;
                    total += ((2.0 * mx * my + C1) * (2.0 * cov + C2))
                        / ((mx * mx + my * my + C1) * (vx + vy + C2));
                }
                let ssim = total / s.channels() as f64;
                out.set(b, by, bx, 0, ((1.0 - ssim) / 2.0).clamp(0.0, 1.0));
            }
        }
    }
    Ok(out)
}

/// Moving average of mean block dissimilarity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBaseline {
    value: f64,
}

impl Default for LossBaseline {
    fn default() -> Self {
        Self::new()
    }
}

impl LossBaseline {
    /// An uninitialized baseline; the first update adopts the batch mean.
    pub fn new() -> Self {
        Self { value: 0.0 }
    }

    pub fn from_value(value: f64) -> Self {
        Self { value }
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn is_initialized(&self) -> bool {
        self.value > 0.0
    }

    /// Adopts `batch_mean` if the baseline is still zero.
    pub fn initialize(&mut self, batch_mean: f64) -> Result<(), LossError> {
        check_batch(batch_mean)?;
        if !self.is_initialized() {
            self.value = batch_mean;
        }
        Ok(())
    }

    /// `S' = 0.99 S + 0.01 batch_mean`, or `S' = batch_mean` when unset.
    pub fn update(&mut self, batch_mean: f64) -> Result<(), LossError> {
        check_batch(batch_mean)?;
        self.value = if self.is_initialized() {
            BASELINE_DECAY * self.value + (1.0 - BASELINE_DECAY) * batch_mean
        } else {
            batch_mean
        };
        Ok(())
    }
}

fn check_batch(v: f64) -> Result<(), LossError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(LossError::BadBatch(v))
    }
}

/// Block weights `D / S`.
pub fn block_weights(dssim: &BlockGrid, baseline: &LossBaseline) -> Result<BlockGrid, LossError> {
    if !baseline.is_initialized() {
        return Err(LossError::Uninitialized);
    }
    let s = baseline.value();
    Ok(dssim.map(|d| d / s))
}

/// Broadcasts block weights to every pixel and channel of `shape`.
pub fn expand_weights<T: Scalar>(weights: &BlockGrid, shape: Shape) -> Tensor<T> {
    let mut out = Tensor::zeros(shape);
    let c = shape.channels();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let pixel = i / c;
        let xx = pixel % shape.width();
        let yy = (pixel / shape.width()) % shape.height();
        let b = pixel / (shape.width() * shape.height());
        *v = T::of(weights.at(b, yy / BLOCK, xx / BLOCK, 0));
    }
    out
}

/// Loss value and the frozen weights that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedL1 {
    pub loss: f64,
    pub weights: BlockGrid,
}

impl WeightedL1 {
    /// Derivative with respect to `y`: `w * sign(y - x)` per pixel.
    pub fn gradient<T: Scalar>(&self, x: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>, LossError> {
        let w = expand_weights::<T>(&self.weights, x.shape());
        let mut g = y.zip_map(x, |a, b| {
            let d = a - b;
            if d > T::zero() {
                T::one()
            } else if d < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        })?;
        for (gv, wv) in g.data_mut().iter_mut().zip(w.data()) {
            *gv = *gv * *wv;
        }
        Ok(g)
    }
}

/// `sum_blocks (D_b / S) * |y - x|_1` with `x` the original and `y` the
/// reconstruction, both on the [0, 1] scale.
pub fn weighted_l1<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>, baseline: &LossBaseline) -> Result<WeightedL1, LossError> {
    let weights = block_weights(&block_dssim(x, y)?, baseline)?;
    let w = expand_weights::<f64>(&weights, x.shape());
    let loss = x
        .data()
        .iter()
        .zip(y.data())
        .zip(w.data())
        .map(|((&a, &b), &wv)| wv * (b.as_f64() - a.as_f64()).abs())
        .sum();
    Ok(WeightedL1 { loss, weights })
}
