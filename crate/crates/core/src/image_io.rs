//! PNG loading and saving, reflect padding, and a synthetic image corpus.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tensor::{Scalar, Shape, Tensor};

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("{path}: {source}")]
    Decode { path: PathBuf, source: image::ImageError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("expected one RGB image, got shape {0:?}")]
    Shape(Shape),
    #[error("no PNG images in {0}")]
    Empty(PathBuf),
}

/// Reads any 8-bit image as RGB with values in [0, 1], shape (1, h, w, 3).
pub fn load_png(path: &Path) -> Result<Tensor<f64>, ImageError> {
    let img = image::open(path).map_err(|source| ImageError::Decode { path: path.into(), source })?.to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
    Ok(Tensor::from_vec(Shape::new(1, h as usize, w as usize, 3), data).expect("rgb buffer matches its dimensions"))
}

/// Quantizes a [0, 1] RGB tensor to 8 bits, rounding to nearest.
pub fn to_rgb8(image: &Tensor<f64>) -> Result<image::RgbImage, ImageError> {
    let s = image.shape();
    if s.batch() != 1 || s.channels() != 3 {
        return Err(ImageError::Shape(s));
    }
    let bytes = image.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    Ok(image::RgbImage::from_raw(s.width() as u32, s.height() as u32, bytes).expect("buffer matches shape"))
}

pub fn save_png(path: &Path, image: &Tensor<f64>) -> Result<(), ImageError> {
    to_rgb8(image)?
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| ImageError::Decode { path: path.into(), source })
}

/// All `.png` files directly inside `dir`, sorted by file name.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>, ImageError> {
    let entries = std::fs::read_dir(dir).map_err(|source| ImageError::Io { path: dir.into(), source })?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|source| ImageError::Io { path: dir.into(), source })?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            paths.push(path);
        }
    }
    if paths.is_empty() {
        return Err(ImageError::Empty(dir.into()));
    }
    paths.sort();
    Ok(paths)
}

pub fn load_dir(dir: &Path) -> Result<Vec<(PathBuf, Tensor<f64>)>, ImageError> {
    list_pngs(dir)?.into_iter().map(|p| load_png(&p).map(|img| (p, img))).collect()
}

fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// Extends the bottom and right edges by mirroring (edge pixel not
/// repeated) up to the next multiple of `multiple`.
pub fn reflect_pad<T: Scalar>(image: &Tensor<T>, multiple: usize) -> Tensor<T> {
    let s = image.shape();
    let h = s.height().div_ceil(multiple) * multiple;
    let w = s.width().div_ceil(multiple) * multiple;
    if (h, w) == (s.height(), s.width()) {
        return image.clone();
    }
    let c = s.channels();
    let mut out = Vec::with_capacity(s.batch() * h * w * c);
    for b in 0..s.batch() {
        for y in 0..h {
            let sy = reflect(y, s.height());
            for x in 0..w {
                let sx = reflect(x, s.width());
                let base = image.index(b, sy, sx, 0);
                out.extend_from_slice(&image.data()[base..base + c]);
            }
        }
    }
    Tensor::from_vec(Shape::new(s.batch(), h, w, c), out).expect("padded size")
}

/// Deterministic procedural RGB image in [0, 1]: a smooth gradient with
/// overlaid shapes, stripes and mild noise.
pub fn synthetic_image(height: usize, width: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.2..0.8));
    let grad: [(f64, f64); 3] = std::array::from_fn(|_| (rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4)));
    let mut img = Tensor::from_fn(Shape::new(1, height, width, 3), |i| {
        let c = i % 3;
        let p = i / 3;
        let (y, x) = ((p / width) as f64 / height as f64, (p % width) as f64 / width as f64);
        base[c] + grad[c].0 * (y - 0.5) + grad[c].1 * (x - 0.5)
    });

    let shapes = rng.random_range(3..8);
    for _ in 0..shapes {
        let color: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
        let cy = rng.random_range(0.0..height as f64);
        let cx = rng.random_range(0.0..width as f64);
        let ry = rng.random_range(0.1..0.4) * height as f64;
        let rx = rng.random_range(0.1..0.4) * width as f64;
        let disc = rng.random_bool(0.5);
        let stripes = rng.random_bool(0.3).then(|| (rng.random_range(2.0..8.0), rng.random_range(0.0..PI)));
        for y in 0..height {
            for x in 0..width {
                let (dy, dx) = ((y as f64 - cy) / ry, (x as f64 - cx) / rx);
                let inside = if disc { dy * dy + dx * dx <= 1.0 } else { dy.abs() <= 1.0 && dx.abs() <= 1.0 };
                if !inside {
                    continue;
                }
                let shade = stripes.map_or(1.0, |(freq, angle)| {
                    let u = (x as f64 * angle.cos() + y as f64 * angle.sin()) / width as f64;
                    0.75 + 0.25 * (2.0 * PI * freq * u).sin()
                });
                for (c, col) in color.iter().enumerate() {
                    img.set(0, y, x, c, col * shade);
                }
            }
        }
    }
    for v in img.data_mut() {
        *v = (*v + rng.random_range(-0.02..0.02)).clamp(0.0, 1.0);
    }
    img
}

/// Writes `count` synthetic images named `img_NNN.png` into `dir`.
pub fn write_synthetic_corpus(
    dir: &Path,
    count: usize,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<Vec<PathBuf>, ImageError> {
    std::fs::create_dir_all(dir).map_err(|source| ImageError::Io { path: dir.into(), source })?;
    (0..count)
        .map(|i| {
            let path = dir.join(format!("img_{i:03}.png"));
            let img = synthetic_image(height, width, seed.wrapping_mul(1_000_003).wrapping_add(i as u64));
            save_png(&path, &img)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflection_indices() {
        let idx: Vec<usize> = (0..9).map(|i| reflect(i, 4)).collect();
        assert_eq!(idx, [0, 1, 2, 3, 2, 1, 0, 1, 2]);
        assert_eq!(reflect(5, 1), 0);
    }
}
