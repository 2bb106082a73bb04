//! Rate-distortion curves, area under the curve and Bjøntegaard deltas.
//!
//! Quality values of `+inf` (perfect reconstructions under PSNR or the dB
//! transform) are kept in curves as sentinels. Every summary skips them
//! and reports how many it skipped.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Samples used when integrating fitted curves.
pub const BD_SAMPLES: usize = 100;
const FIT_DEGREE: usize = 3;

#[derive(Debug, Error)]
pub enum RdError {
    #[error("bpp must be finite and positive, got {0}")]
    Bpp(f64),
    #[error("quality must not be NaN or -inf (point {0})")]
    Quality(usize),
    #[error("bpp must strictly increase: {prev} then {next}")]
    NotIncreasing { prev: f64, next: f64 },
    #[error("need at least {need} finite points, have {have}")]
    TooFewPoints { need: usize, have: usize },
    #[error("curves do not overlap in {0}")]
    NoOverlap(&'static str),
    #[error("least-squares fit failed")]
    Fit,
    #[error("csv line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error(transparent)]
    CsvIo(#[from] csv::Error),
}

/// Points sorted by strictly increasing bpp.
#[derive(Clone, Debug, PartialEq)]
pub struct RdCurve {
    points: Vec<(f64, f64)>,
}

/// A summary value together with the number of infinite points dropped.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub value: f64,
    pub skipped: usize,
}

impl RdCurve {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, RdError> {
        for (i, &(bpp, q)) in points.iter().enumerate() {
            if !(bpp.is_finite() && bpp > 0.0) {
                return Err(RdError::Bpp(bpp));
            }
            if q.is_nan() || q == f64::NEG_INFINITY {
                return Err(RdError::Quality(i));
            }
        }
        for w in points.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(RdError::NotIncreasing { prev: w[0].0, next: w[1].0 });
            }
        }
        Ok(Self { points })
    }

    /// Sorts by bpp first; duplicates are still rejected.
    pub fn from_unsorted(mut points: Vec<(f64, f64)>) -> Result<Self, RdError> {
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self::new(points)
    }

    /// Builds a curve from measured operating points, several of which may
    /// share a rate (an allocator can settle on the same map for different
    /// targets). Points at equal bpp collapse to the one with the best quality.
    pub fn from_operating_points(mut points: Vec<(f64, f64)>) -> Result<Self, RdError> {
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(points.len());
        for p in points {
            match merged.last_mut() {
                Some(last) if last.0 == p.0 => {
                    if p.1.is_nan() || p.1 > last.1 {
                        last.1 = p.1;
                    }
                }
                _ => merged.push(p),
            }
        }
        Self::new(merged)
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn finite(&self) -> (Vec<(f64, f64)>, usize) {
        let kept: Vec<_> = self.points.iter().copied().filter(|p| p.1.is_finite()).collect();
        let skipped = self.points.len() - kept.len();
        (kept, skipped)
    }

    /// Reads `bpp,quality` CSV with a header row.
    pub fn read_csv(reader: impl Read) -> Result<Self, RdError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "bpp" || &headers[1] != "quality" {
            return Err(RdError::Csv { line: 1, message: format!("expected header bpp,quality, got {headers:?}") });
        }
        let mut points = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let field = |i: usize| -> Result<f64, RdError> {
                let text = record.get(i).ok_or_else(|| RdError::Csv { line, message: "missing field".into() })?;
                text.parse().map_err(|_| RdError::Csv { line, message: format!("not a number: {text:?}") })
            };
            points.push((field(0)?, field(1)?));
        }
        Self::new(points)
    }

    pub fn write_csv(&self, writer: impl Write) -> Result<(), RdError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["bpp", "quality"])?;
        for &(bpp, q) in &self.points {
            w.write_record([bpp.to_string(), q.to_string()])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2).zip(ys.windows(2)).map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1])).sum()
}

/// Trapezoidal area under the curve over its own bpp span.
pub fn auc(curve: &RdCurve) -> Result<Summary, RdError> {
    let (pts, skipped) = curve.finite();
    if pts.len() < 2 {
        return Err(RdError::TooFewPoints { need: 2, have: pts.len() });
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    Ok(Summary { value: trapezoid(&xs, &ys), skipped })
}

/// Least-squares cubic in a centred and scaled abscissa.
#[derive(Clone, Debug)]
struct Cubic {
    center: f64,
    scale: f64,
    coef: [f64; FIT_DEGREE + 1],
}

impl Cubic {
    fn fit(xs: &[f64], ys: &[f64]) -> Result<Self, RdError> {
        let n = xs.len();
        let center = xs.iter().sum::<f64>() / n as f64;
        let spread = xs.iter().map(|x| (x - center).abs()).fold(0.0, f64::max);
        let scale = if spread > 0.0 { spread } else { 1.0 };
        let a = DMatrix::from_fn(n, FIT_DEGREE + 1, |r, c| ((xs[r] - center) / scale).powi(c as i32));
        let b = DVector::from_column_slice(ys);
        let sol = a.svd(true, true).solve(&b, 1e-14).map_err(|_| RdError::Fit)?;
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(RdError::Fit);
        }
        Ok(Self { center, scale, coef: std::array::from_fn(|i| sol[i]) })
    }

    fn eval(&self, x: f64) -> f64 {
        let u = (x - self.center) / self.scale;
        self.coef.iter().rev().fold(0.0, |acc, c| acc * u + c)
    }
}

/// Options for Bjøntegaard computations.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BdOptions {
    /// Extrapolate the reference curve's fit up to this bpp before the
    /// overlap window is computed.
    pub extend_reference_to: Option<f64>,
}

struct Prepared {
    log_rates: Vec<f64>,
    qualities: Vec<f64>,
    skipped: usize,
}

fn prepare(curve: &RdCurve) -> Result<Prepared, RdError> {
    let (pts, skipped) = curve.finite();
    if pts.len() < FIT_DEGREE + 1 {
        return Err(RdError::TooFewPoints { need: FIT_DEGREE + 1, have: pts.len() });
    }
    let (log_rates, qualities) = pts.into_iter().map(|(b, q)| (b.log10(), q)).unzip();
    Ok(Prepared { log_rates, qualities, skipped })
}

fn range(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// Mean of `test_fit - ref_fit` over `[lo, hi]`, by trapezoid over
/// uniform samples.
fn mean_difference(reference: &Cubic, test: &Cubic, lo: f64, hi: f64) -> f64 {
    let xs: Vec<f64> = (0..BD_SAMPLES).map(|i| lo + (hi - lo) * i as f64 / (BD_SAMPLES - 1) as f64).collect();
    let diffs: Vec<f64> = xs.iter().map(|&x| test.eval(x) - reference.eval(x)).collect();
    trapezoid(&xs, &diffs) / (hi - lo)
}

fn overlap(a: (f64, f64), b: (f64, f64), what: &'static str) -> Result<(f64, f64), RdError> {
    let lo = a.0.max(b.0);
    let hi = a.1.min(b.1);
    if hi > lo {
        Ok((lo, hi))
    } else {
        Err(RdError::NoOverlap(what))
    }
}

/// Average rate difference at equal quality, in percent. Positive values
/// mean the test curve needs less rate than the reference.
pub fn bd_rate(reference: &RdCurve, test: &RdCurve, options: BdOptions) -> Result<Summary, RdError> {
    let r = prepare(reference)?;
    let t = prepare(test)?;
    let ref_fit = Cubic::fit(&r.qualities, &r.log_rates)?;
    let test_fit = Cubic::fit(&t.qualities, &t.log_rates)?;
    let mut ref_range = range(&r.qualities);
    if let Some(bpp) = options.extend_reference_to {
        // Quality the reference would reach at the extended rate.
        let q_of_rate = Cubic::fit(&r.log_rates, &r.qualities)?;
        ref_range.1 = ref_range.1.max(q_of_rate.eval(bpp.log10()));
    }
    let (lo, hi) = overlap(ref_range, range(&t.qualities), "quality")?;
    let avg = mean_difference(&ref_fit, &test_fit, lo, hi);
    Ok(Summary { value: -(10f64.powf(avg) - 1.0) * 100.0, skipped: r.skipped + t.skipped })
}

/// Average quality difference (test minus reference) at equal log-rate.
pub fn bd_quality(reference: &RdCurve, test: &RdCurve, options: BdOptions) -> Result<Summary, RdError> {
    let r = prepare(reference)?;
    let t = prepare(test)?;
    let ref_fit = Cubic::fit(&r.log_rates, &r.qualities)?;
    let test_fit = Cubic::fit(&t.log_rates, &t.qualities)?;
    let mut ref_range = range(&r.log_rates);
    if let Some(bpp) = options.extend_reference_to {
        ref_range.1 = ref_range.1.max(bpp.log10());
    }
    let (lo, hi) = overlap(ref_range, range(&t.log_rates), "rate")?;
    Ok(Summary { value: mean_difference(&ref_fit, &test_fit, lo, hi), skipped: r.skipped + t.skipped })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_fit_is_exact_on_cubics() {
        let xs: Vec<f64> = (0..7).map(|i| 10.0 + i as f64 * 3.0).collect();
        let f = |x: f64| 2.0 - 0.5 * x + 0.01 * x * x - 1e-4 * x * x * x;
        let ys: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
        let fit = Cubic::fit(&xs, &ys).unwrap();
        for x in [9.0, 17.5, 31.0] {
            assert!((fit.eval(x) - f(x)).abs() < 1e-10);
        }
    }
}
