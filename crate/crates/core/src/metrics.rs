//! Full-reference quality metrics on RGB images in [0, 1].
//!
//! Every metric is computed per channel and averaged over channels.

use thiserror::Error;

use crate::error::ShapeError;
use crate::tensor::{ensure_same, Scalar, Tensor};

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
const C1: f64 = K1 * K1;
const C2: f64 = K2 * K2;

/// Published five-scale weights before normalization.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
pub const MS_SSIM_SCALES: usize = 5;
/// Smallest side length that keeps one full window at the coarsest scale.
pub const MS_SSIM_MIN_SIZE: usize = WINDOW << (MS_SSIM_SCALES - 1);

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("{metric} needs images of at least {min}x{min}, got {height}x{width}")]
    TooSmall { metric: &'static str, min: usize, height: usize, width: usize },
    #[error("quality {0} is above 1")]
    Domain(f64),
    #[error("metric inputs must be single images")]
    Batch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Metric {
    Psnr,
    Ssim,
    MsSsim,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Psnr => "psnr",
            Metric::Ssim => "ssim",
            Metric::MsSsim => "msssim",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "psnr" => Some(Metric::Psnr),
            "ssim" => Some(Metric::Ssim),
            "msssim" => Some(Metric::MsSsim),
            _ => None,
        }
    }

    /// Minimum image side the metric accepts.
    pub fn min_size(self) -> usize {
        match self {
            Metric::Psnr => 1,
            Metric::Ssim => WINDOW,
            Metric::MsSsim => MS_SSIM_MIN_SIZE,
        }
    }

    /// Quality in dB: PSNR as is, the SSIM family through [`to_db`].
    pub fn evaluate_db<T: Scalar>(self, x: &Tensor<T>, y: &Tensor<T>) -> Result<f64, MetricError> {
        match self {
            Metric::Psnr => psnr(x, y),
            Metric::Ssim => to_db(ssim(x, y)?),
            Metric::MsSsim => to_db(ms_ssim(x, y)?),
        }
    }
}

/// Single-channel plane in f64.
#[derive(Clone, Debug)]
struct Plane {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Plane {
    fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.w + x]
    }

    fn downsample(&self) -> Plane {
        let (h, w) = (self.h / 2, self.w / 2);
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let s = self.at(2 * y, 2 * x)
                    + self.at(2 * y, 2 * x + 1)
                    + self.at(2 * y + 1, 2 * x)
                    + self.at(2 * y + 1, 2 * x + 1);
                data.push(s / 4.0);
            }
        }
        Plane { h, w, data }
    }

    fn product(&self, other: &Plane) -> Plane {
        Plane { h: self.h, w: self.w, data: self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect() }
    }
}

fn planes<T: Scalar>(img: &Tensor<T>) -> Result<Vec<Plane>, MetricError> {
    let s = img.shape();
    if s.batch() != 1 {
        return Err(MetricError::Batch);
    }
    Ok((0..s.channels())
        .map(|c| Plane {
            h: s.height(),
            w: s.width(),
            data: (0..s.height() * s.width()).map(|i| img.data()[i * s.channels() + c].as_f64()).collect(),
        })
        .collect())
}

/// Normalized 1-d Gaussian taps.
pub fn gaussian_taps() -> [f64; WINDOW] {
    let r = (WINDOW / 2) as f64;
    let mut taps = [0.0; WINDOW];
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - r;
        *t = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Separable Gaussian filter over valid window positions.
fn filter(p: &Plane, taps: &[f64; WINDOW]) -> Plane {
    let (oh, ow) = (p.h + 1 - WINDOW, p.w + 1 - WINDOW);
    let mut rows = vec![0.0; p.h * ow];
    for y in 0..p.h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * p.at(y, x + k)).sum();
        }
    }
    let mut data = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            data[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * rows[(y + k) * ow + x]).sum();
        }
    }
    Plane { h: oh, w: ow, data }
}

/// Mean SSIM and mean contrast-structure term of one plane pair.
fn ssim_terms(x: &Plane, y: &Plane) -> (f64, f64) {
    let taps = gaussian_taps();
    let mx = filter(x, &taps);
    let my = filter(y, &taps);
    let xx = filter(&x.product(x), &taps);
    let yy = filter(&y.product(y), &taps);
    let xy = filter(&x.product(y), &taps);
    let n = mx.data.len() as f64;
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..mx.data.len() {
        let (a, b) = (mx.data[i], my.data[i]);
        let vx = xx.data[i] - a * a;
        let vy = yy.data[i] - b * b;
        let cov = xy.data[i] - a * b;
        let c = (2.0 * cov + C2) / (vx + vy + C2);
        cs += c;
        ssim += c * (2.0 * a * b + C1) / (a * a + b * b + C1);
    }
    (ssim / n, cs / n)
}

fn check_size<T: Scalar>(metric: &'static str, x: &Tensor<T>, min: usize) -> Result<(), MetricError> {
    let s = x.shape();
    if s.height() < min || s.width() < min {
        return Err(MetricError::TooSmall { metric, min, height: s.height(), width: s.width() });
    }
    Ok(())
}

/// Peak signal-to-noise ratio for peak 1; `+inf` when the images match.
pub fn psnr<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Result<f64, MetricError> {
    ensure_same(x.shape(), y.shape())?;
    let mse = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| {
            let d = a.as_f64() - b.as_f64();
            d * d
        })
        .sum::<f64>()
        / x.len() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

/// Gaussian-window SSIM averaged over valid windows and channels.
pub fn ssim<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Result<f64, MetricError> {
    ensure_same(x.shape(), y.shape())?;
    check_size("SSIM", x, WINDOW)?;
    let (px, py) = (planes(x)?, planes(y)?);
    let total: f64 = px.iter().zip(&py).map(|(a, b)| ssim_terms(a, b).0).sum();
    Ok(total / px.len() as f64)
}

/// The first `scales` published weights, normalized to sum to one.
pub fn ms_ssim_weights(scales: usize) -> Vec<f64> {
    let w = &MS_SSIM_WEIGHTS[..scales.clamp(1, MS_SSIM_SCALES)];
    let sum: f64 = w.iter().sum();
    w.iter().map(|v| v / sum).collect()
}

/// Smallest image side accepted by [`ms_ssim_scales`] with `scales` scales.
pub fn ms_ssim_min_size(scales: usize) -> usize {
    WINDOW << (scales.clamp(1, MS_SSIM_SCALES) - 1)
}

/// Five-scale SSIM with 2x2 average pooling between scales.
pub fn ms_ssim<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Result<f64, MetricError> {
    ms_ssim_scales(x, y, MS_SSIM_SCALES)
}

/// Multi-scale SSIM over the first `scales` (1 to 5) dyadic scales.
///
/// Contrast-structure terms enter at every scale, luminance only at the
/// coarsest. Negative per-scale terms are clamped to zero before
/// exponentiation.
pub fn ms_ssim_scales<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>, scales: usize) -> Result<f64, MetricError> {
    ensure_same(x.shape(), y.shape())?;
    let scales = scales.clamp(1, MS_SSIM_SCALES);
    check_size("MS-SSIM (use fewer scales for smaller images)", x, ms_ssim_min_size(scales))?;
    let weights = ms_ssim_weights(scales);
    let (px, py) = (planes(x)?, planes(y)?);
    let mut total = 0.0;
    for (mut a, mut b) in px.into_iter().zip(py) {
        let mut value = 1.0;
        for (scale, w) in weights.iter().enumerate() {
            let (s, cs) = ssim_terms(&a, &b);
            if scale + 1 == scales {
                value *= s.max(0.0).powf(*w);
            } else {
                value *= cs.max(0.0).powf(*w);
                a = a.downsample();
                b = b.downsample();
            }
        }
        total += value;
    }
    Ok(total / x.shape().channels() as f64)
}

/// `-10 log10(1 - q)`; `+inf` at `q = 1`.
pub fn to_db(q: f64) -> Result<f64, MetricError> {
    if q > 1.0 || q.is_nan() {
        return Err(MetricError::Domain(q));
    }
    Ok(if q == 1.0 { f64::INFINITY } else { -10.0 * (1.0 - q).log10() })
}
