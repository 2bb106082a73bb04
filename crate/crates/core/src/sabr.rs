//! Per-tile iteration allocation.
//!
//! After a full compression, each 16x16 tile keeps only as many iterations
//! as it needs to reach a quality target, within a window around the
//! target iteration count. The resulting height map travels with the
//! stream and absent stacks are zero-filled on decode.

use thiserror::Error;

use crate::codec::{CodeTensor, BINARIZER_DEPTH, MAX_ITERATIONS, TILE};
use crate::error::ShapeError;
use crate::tensor::{ensure_same, Scalar, Tensor};

const SUB: usize = TILE / 2;

#[derive(Debug, Error, PartialEq)]
pub enum SabrError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("image {height}x{width} is not a multiple of {TILE}")]
    Dims { height: usize, width: usize },
    #[error("no quality curves supplied")]
    EmptyCurves,
    #[error("curve grids disagree: {0}")]
    Grid(String),
    #[error("target iterations {0} outside 1..={MAX_ITERATIONS}")]
    Target(usize),
}

/// Row-major per-tile values.
#[derive(Clone, Debug, PartialEq)]
pub struct TileGrid {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl TileGrid {
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Iterations kept per tile.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeightMap {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl HeightMap {
    pub fn uniform(rows: usize, cols: usize, t: u8) -> Self {
        Self { rows, cols, data: vec![t; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<u8>) -> Result<Self, SabrError> {
        if data.len() != rows * cols {
            return Err(SabrError::Grid(format!("{} entries for a {rows}x{cols} map", data.len())));
        }
        if let Some(v) = data.iter().find(|&&v| v as usize > MAX_ITERATIONS) {
            return Err(SabrError::Grid(format!("entry {v} exceeds {MAX_ITERATIONS}")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn at(&self, r: usize, c: usize) -> u8 {
        self.data[r * self.cols + c]
    }

    pub fn total(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn max(&self) -> u8 {
        self.data.iter().copied().max().unwrap_or(0)
    }
}

/// Worst 8x8 sub-tile mean absolute error of every 16x16 tile, averaged
/// over channels.
pub fn tile_error<T: Scalar>(original: &Tensor<T>, reconstruction: &Tensor<T>) -> Result<TileGrid, SabrError> {
    ensure_same(original.shape(), reconstruction.shape())?;
    let s = original.shape();
    if s.batch() != 1 {
        return Err(SabrError::Grid(format!("expected one image, got {}", s.batch())));
    }
    if s.height() % TILE != 0 || s.width() % TILE != 0 {
        return Err(SabrError::Dims { height: s.height(), width: s.width() });
    }
    let (rows, cols) = (s.height() / TILE, s.width() / TILE);
    // Sum of |diff| over each 8x8 sub-tile, all channels.
    let (sr, sc) = (rows * 2, cols * 2);
    let mut sums = vec![0.0f64; sr * sc];
    let ch = s.channels();
    for (i, (a, b)) in original.data().iter().zip(reconstruction.data()).enumerate() {
        let p = i / ch;
        let (y, x) = (p / s.width(), p % s.width());
        sums[(y / SUB) * sc + x / SUB] += (a.as_f64() - b.as_f64()).abs();
    }
    let norm = (SUB * SUB * ch) as f64;
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let worst = [(0, 0), (0, 1), (1, 0), (1, 1)]
                .iter()
                .map(|(dy, dx)| sums[(2 * r + dy) * sc + 2 * c + dx] / norm)
                .fold(0.0, f64::max);
            data.push(worst);
        }
    }
    Ok(TileGrid { rows, cols, data })
}

/// Allowed allocation `[ceil(0.5 t), min(16, ceil(1.2 t))]`.
pub fn clamp_window(target_t: usize) -> (usize, usize) {
    // Integer ceilings avoid 1.2 * t landing a hair above an integer.
    let lo = target_t.div_ceil(2);
    let hi = (6 * target_t).div_ceil(5).min(MAX_ITERATIONS);
    (lo, hi)
}

/// Per tile, the fewest iterations whose error is at most `target_quality`
/// (16 when none is), clamped into [`clamp_window`].
///
/// `curves[i]` holds the tile errors after `i + 1` iterations.
pub fn allocate(curves: &[TileGrid], target_quality: f64, target_t: usize) -> Result<HeightMap, SabrError> {
    let first = curves.first().ok_or(SabrError::EmptyCurves)?;
    if target_t == 0 || target_t > MAX_ITERATIONS {
        return Err(SabrError::Target(target_t));
    }
    if curves.len() > MAX_ITERATIONS {
        return Err(SabrError::Grid(format!("{} curves for at most {MAX_ITERATIONS} iterations", curves.len())));
    }
    if curves.iter().any(|g| g.rows != first.rows || g.cols != first.cols) {
        return Err(SabrError::Grid("curves cover different tile grids".into()));
    }
    let (lo, hi) = clamp_window(target_t);
    let data = (0..first.rows * first.cols)
        .map(|i| {
            let needed = curves.iter().position(|g| g.data[i] <= target_quality).map_or(MAX_ITERATIONS, |p| p + 1);
            needed.clamp(lo, hi) as u8
        })
        .collect();
    Ok(HeightMap { rows: first.rows, cols: first.cols, data })
}

/// Mean tile error after `target_t` iterations: the quality target used
/// when only a rate is requested.
pub fn target_quality_for(curves: &[TileGrid], target_t: usize) -> Result<f64, SabrError> {
    if curves.is_empty() {
        return Err(SabrError::EmptyCurves);
    }
    if target_t == 0 || target_t > curves.len() {
        return Err(SabrError::Target(target_t));
    }
    Ok(curves[target_t - 1].mean())
}

/// Zeroes every stack at iteration `i` with `i >= map[r][c]`.
pub fn apply_mask(codes: &CodeTensor, map: &HeightMap) -> Result<CodeTensor, SabrError> {
    if codes.rows() != map.rows || codes.cols() != map.cols {
        return Err(SabrError::Grid(format!(
            "map {}x{} vs codes {}x{}",
            map.rows,
            map.cols,
            codes.rows(),
            codes.cols()
        )));
    }
    let mut out = codes.clone();
    for i in 0..codes.iterations() {
        for r in 0..map.rows {
            for c in 0..map.cols {
                if i >= map.at(r, c) as usize {
                    out.stack_mut(i, r, c).fill(0);
                }
            }
        }
    }
    Ok(out)
}

/// Bits of every kept stack.
pub fn kept_bits(map: &HeightMap, iterations: usize) -> usize {
    map.data.iter().map(|&v| (v as usize).min(iterations)).sum::<usize>() * BINARIZER_DEPTH
}

/// Rate including the serialized height map, over the tile grid's pixels.
pub fn sabr_bpp(map: &HeightMap, map_bytes: usize) -> f64 {
    let pixels = (map.rows * TILE * map.cols * TILE) as f64;
    (map.total() * BINARIZER_DEPTH + 8 * map_bytes) as f64 / pixels
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_bounds() {
        assert_eq!(clamp_window(4), (2, 5));
        assert_eq!(clamp_window(1), (1, 2));
        assert_eq!(clamp_window(5), (3, 6));
        assert_eq!(clamp_window(10), (5, 12));
        assert_eq!(clamp_window(16), (8, 16));
        for t in 1..=16 {
            let (lo, hi) = clamp_window(t);
            assert_eq!(lo, (0.5 * t as f64).ceil() as usize);
            let exact_hi = (12 * t).div_ceil(10).min(16);
            assert_eq!(hi, exact_hi);
        }
    }
}
