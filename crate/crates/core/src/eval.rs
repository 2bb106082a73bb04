//! Runs a model over an image set and builds rate-distortion curves.

use rayon::prelude::*;
use thiserror::Error;

use crate::bitstream::{measured_bpp, serialize, StreamError};
use crate::codec::{center, compress, decompress, nominal_bpp, uncenter, CodecError, Model, MAX_ITERATIONS, TILE};
use crate::image_io::reflect_pad;
use crate::metrics::{Metric, MetricError};
use crate::rd::{RdCurve, RdError};
use crate::sabr::{allocate, apply_mask, clamp_window, target_quality_for, tile_error, SabrError, TileGrid};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no images to evaluate")]
    NoImages,
    #[error("iterations {0} outside 1..={MAX_ITERATIONS}")]
    Iterations(usize),
    #[error("{metric} needs images of at least {need}x{need}, smallest is {height}x{width}")]
    TooSmall { metric: &'static str, need: usize, height: usize, width: usize },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Sabr(#[from] SabrError),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Rd(#[from] RdError),
}

/// Rate accounting applied to a compressed image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// `t / 8` bpp, no container.
    Nominal,
    /// Entropy-coded container, full tile grid.
    Entropy,
    /// Entropy-coded container with per-tile allocation.
    Sabr,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Nominal => "nominal",
            Variant::Entropy => "entropy",
            Variant::Sabr => "sabr",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nominal" => Some(Variant::Nominal),
            "entropy" => Some(Variant::Entropy),
            "sabr" => Some(Variant::Sabr),
            _ => None,
        }
    }
}

/// Rate and per-metric quality (dB) of one image at one setting.
#[derive(Clone, Debug, PartialEq)]
pub struct Point {
    pub bpp: f64,
    pub quality: Vec<f64>,
}

/// One curve per requested (variant, metric) pair.
#[derive(Clone, Debug)]
pub struct RdSet {
    pub variant: Variant,
    pub metric: Metric,
    pub curve: RdCurve,
}

/// Rounds to the 8-bit grid a decoded PNG would have.
fn quantize(image: &Tensor<f64>) -> Tensor<f64> {
    image.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
}

fn qualities(metrics: &[Metric], original: &Tensor<f64>, recon_centered: &Tensor<f64>) -> Result<Vec<f64>, EvalError> {
    let s = original.shape();
    let cropped = recon_centered.crop(0, 0, 0, s.height(), s.width()).map_err(CodecError::from)?;
    let decoded = quantize(&uncenter(&cropped));
    metrics.iter().map(|m| m.evaluate_db(original, &decoded).map_err(EvalError::from)).collect()
}

/// Measures one `[0, 1]` RGB image at `t = 1..=t_max` for every variant.
/// The result is indexed `[variant][t - 1]`.
pub fn measure_image(
    model: &Model<f64>,
    image: &Tensor<f64>,
    variants: &[Variant],
    metrics: &[Metric],
    t_max: usize,
) -> Result<Vec<Vec<Point>>, EvalError> {
    if t_max == 0 || t_max > MAX_ITERATIONS {
        return Err(EvalError::Iterations(t_max));
    }
    let s = image.shape();
    let (width, height) = (s.width() as u32, s.height() as u32);
    let padded = center(&reflect_pad(image, TILE));
    let needs_all = variants.contains(&Variant::Sabr);
    let run = compress(model, &padded, if needs_all { MAX_ITERATIONS } else { t_max })?;

    let full_quality: Vec<Vec<f64>> =
        run.reconstructions[..t_max].iter().map(|r| qualities(metrics, image, r)).collect::<Result<_, _>>()?;
    let curves: Vec<TileGrid> = if needs_all {
        run.reconstructions.iter().map(|r| tile_error(&padded, r)).collect::<Result<_, _>>()?
    } else {
        Vec::new()
    };

    let mut out = Vec::with_capacity(variants.len());
    for &variant in variants {
        let mut points = Vec::with_capacity(t_max);
        for t in 1..=t_max {
            let point = match variant {
                Variant::Nominal => Point { bpp: nominal_bpp(t), quality: full_quality[t - 1].clone() },
                Variant::Entropy => {
                    let bytes = serialize(&run.codes.truncated(t), None, width, height, true)?;
                    Point { bpp: measured_bpp(bytes.len(), width, height)?, quality: full_quality[t - 1].clone() }
                }
                Variant::Sabr => {
                    let map = allocate(&curves, target_quality_for(&curves, t)?, t)?;
                    let masked = apply_mask(&run.codes.truncated(clamp_window(t).1), &map)?;
                    let bytes = serialize(&masked, Some(&map), width, height, true)?;
                    let recon = decompress(model, &masked, 0.0)?;
                    Point { bpp: measured_bpp(bytes.len(), width, height)?, quality: qualities(metrics, image, &recon)? }
                }
            };
            points.push(point);
        }
        out.push(points);
    }
    Ok(out)
}

/// Averages per-image measurements into one curve per variant and metric.
/// Rates and dB qualities are both arithmetic means over images. Operating
/// points that land on the same mean rate are merged, keeping the best quality.
pub fn rd_curves(
    model: &Model<f64>,
    images: &[Tensor<f64>],
    variants: &[Variant],
    metrics: &[Metric],
    t_max: usize,
) -> Result<Vec<RdSet>, EvalError> {
    if images.is_empty() {
        return Err(EvalError::NoImages);
    }
    for &m in metrics {
        if let Some(small) = images.iter().find(|i| i.shape().height().min(i.shape().width()) < m.min_size()) {
            return Err(EvalError::TooSmall {
                metric: m.name(),
                need: m.min_size(),
                height: small.shape().height(),
                width: small.shape().width(),
            });
        }
    }
    let per_image: Vec<Vec<Vec<Point>>> = images
        .par_iter()
        .map(|img| measure_image(model, img, variants, metrics, t_max))
        .collect::<Result<_, _>>()?;

    let n = images.len() as f64;
    let mut sets = Vec::new();
    for (vi, &variant) in variants.iter().enumerate() {
        for (mi, &metric) in metrics.iter().enumerate() {
            let points = (0..t_max)
                .map(|ti| {
                    let bpp = per_image.iter().map(|p| p[vi][ti].bpp).sum::<f64>() / n;
                    let q = per_image.iter().map(|p| p[vi][ti].quality[mi]).sum::<f64>() / n;
                    (bpp, q)
                })
                .collect();
            sets.push(RdSet { variant, metric, curve: RdCurve::from_operating_points(points)? });
        }
    }
    Ok(sets)
}
