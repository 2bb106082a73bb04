//! Spatial support of the codec and the stacked-IIR model of hidden-state
//! initialization error.
//!
//! The analytic part assumes the default kernel layout: encoder input
//! kernels 3 on every layer with 1x1 hidden kernels, decoder GRU input
//! kernels 3 with hidden kernels 1, 1, 3, 3.

use num_rational::{BigRational, Ratio};
use num_traits::{One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::codec::{CodecError, Decoder, Encoder, Model, BINARIZER_DEPTH, TILE};
use crate::nn::{Eager, Graph, Tape};
use crate::tensor::{Shape, Tensor};

const ENCODER_INPUT_KERNELS: [u64; 4] = [3, 3, 3, 3];
const DECODER_INPUT_KERNELS: [i64; 4] = [3, 3, 3, 3];
const DECODER_HIDDEN_KERNELS: [i64; 4] = [1, 1, 3, 3];

/// Empirical fields count an output change above this as influence.
pub const INFLUENCE_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SupportError {
    #[error("encoder layer {0} outside 0..=3")]
    EncoderLayer(usize),
    #[error("decoder layer {0} outside 1..=4")]
    DecoderLayer(usize),
    #[error("diffusion {k_diffuse} requires priming {k_diffuse}, got {k_prime}")]
    Priming { k_prime: usize, k_diffuse: usize },
    #[error("IIR pole {0} outside (0, 1)")]
    Pole(f64),
    #[error("closed forms exist for 1 to 3 filters, got {0}")]
    Filters(usize),
    #[error("grid of {grid} stacks cannot hold a support of {support} around its centre (need {need})")]
    GridTooSmall { grid: usize, support: u64, need: usize },
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// Pixel support of encoder layer `i` at iteration `t`.
pub fn encoder_support(i: usize, t: usize) -> Result<u64, SupportError> {
    if i > 3 {
        return Err(SupportError::EncoderLayer(i));
    }
    let mut s = if t == 0 { 1 } else { image_support(t - 1, 0, 0)? };
    for (layer, &k) in ENCODER_INPUT_KERNELS.iter().enumerate().take(i + 1) {
        s += (k - 1) << layer;
    }
    Ok(s)
}

/// Bit-stack support of decoder GRU layer `i` (1..=4) at iteration `t`,
/// as an exact fraction. Fractions mean the support alternates between
/// floor and ceiling across output positions.
pub fn decoder_support_bits(i: usize, t: usize) -> Result<Ratio<i64>, SupportError> {
    if !(1..=4).contains(&i) {
        return Err(SupportError::DecoderLayer(i));
    }
    // prev[l] holds layer l's support at the previous iteration.
    let one = Ratio::from_integer(1);
    let mut prev = [one; 5];
    let mut cur = [one; 5];
    for _ in 0..=t {
        cur[0] = one;
        for l in 1..=4 {
            let (h, k) = (DECODER_HIDDEN_KERNELS[l - 1], DECODER_INPUT_KERNELS[l - 1]);
            let scale = 1i64 << (l - 1);
            let through_input = Ratio::new((h - 1).max(0) + k - 1, scale) + cur[l - 1];
            let through_state = Ratio::new((2 * (h - 1)).max(0), scale) + prev[l];
            cur[l] = through_input.max(through_state);
        }
        prev = cur;
    }
    Ok(cur[i])
}

/// `ceil(1.5 k + 5.5)`.
fn stage_growth(k: usize) -> u64 {
    (3 * k as u64 + 11).div_ceil(2)
}

/// Maximum bit-stack support of the reconstruction after iteration `t`
/// (0-based) with `k_prime` priming and `k_diffuse` diffusion steps.
pub fn max_support_bits(t: usize, k_prime: usize, k_diffuse: usize) -> Result<u64, SupportError> {
    if k_diffuse > 0 && k_prime != k_diffuse {
        return Err(SupportError::Priming { k_prime, k_diffuse });
    }
    Ok(stage_growth(k_diffuse) * t as u64 + stage_growth(k_prime))
}

/// Maximum pixel support of the reconstruction.
pub fn image_support(t: usize, k_prime: usize, k_diffuse: usize) -> Result<u64, SupportError> {
    Ok(16 * max_support_bits(t, k_prime, k_diffuse)? + 15)
}

fn check_pole(a: f64) -> Result<(), SupportError> {
    if a > 0.0 && a < 1.0 {
        Ok(())
    } else {
        Err(SupportError::Pole(a))
    }
}

/// Error of the `n`-th of `n` cascaded single-pole filters at step `t`
/// for a unit step input and zero initial state.
pub fn iir_error(n: usize, a: f64, t: usize) -> Result<f64, SupportError> {
    check_pole(a)?;
    let t = t as f64;
    let p = |k: f64| a.powf(t + k);
    match n {
        1 => Ok(p(1.0)),
        2 => Ok((t + 2.0) * p(1.0) - (t + 1.0) * p(2.0)),
        3 => Ok((t + 2.0) * (t + 3.0) / 2.0 * p(1.0) - (t + 1.0) * (t + 3.0) * p(2.0)
            + (t + 1.0) * (t + 2.0) / 2.0 * p(3.0)),
        _ => Err(SupportError::Filters(n)),
    }
}

/// Runs the cascade `y_j[t] = a y_j[t-1] + (1 - a) y_{j-1}[t]` on a unit
/// step. Returns `errors[j][t] = 1 - y_{j+1}[t]` for `t = 0..=t_max`.
pub fn iir_simulate(n: usize, a: f64, t_max: usize) -> Result<Vec<Vec<f64>>, SupportError> {
    check_pole(a)?;
    let mut y = vec![0.0; n];
    let mut errors = vec![Vec::with_capacity(t_max + 1); n];
    for _ in 0..=t_max {
        let mut input = 1.0;
        for (j, yj) in y.iter_mut().enumerate() {
            *yj = a * *yj + (1.0 - a) * input;
            input = *yj;
            errors[j].push(1.0 - *yj);
        }
    }
    Ok(errors)
}

/// Fewest steps `t` after which the last of `n` cascaded filters has
/// error at most `a^2`, computed in exact rational arithmetic.
pub fn min_priming_exact(n: usize, a: &BigRational) -> Result<usize, SupportError> {
    let zero = BigRational::zero();
    let one = BigRational::one();
    if *a <= zero || *a >= one {
        return Err(SupportError::Pole(a.to_f64().unwrap_or(f64::NAN)));
    }
    if n == 0 {
        return Err(SupportError::Filters(0));
    }
    let threshold = a * a;
    let gain = &one - a;
    let mut y = vec![zero; n];
    let mut t = 0;
    loop {
        let mut input = one.clone();
        for yj in y.iter_mut() {
            *yj = a * &*yj + &gain * &input;
            input = yj.clone();
        }
        if &one - &y[n - 1] <= threshold {
            return Ok(t);
        }
        t += 1;
    }
}

/// Floating-point convenience over [`min_priming_exact`]; the pole is
/// converted exactly from its binary value.
pub fn min_priming(n: usize, a: f64) -> Result<usize, SupportError> {
    check_pole(a)?;
    let exact = BigRational::from_float(a).ok_or(SupportError::Pole(a))?;
    min_priming_exact(n, &exact)
}

/// How influence on the reconstruction is detected.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Probe {
    /// Invert every sign of the centre bit stack, rerun the closed loop
    /// (later iterations re-encode the perturbed reconstruction) and mark
    /// output pixels that move by more than [`INFLUENCE_THRESHOLD`]. The
    /// extent is the influence region of one stack.
    Flip,
    /// Reverse-mode derivative of one output pixel (at `offset` inside the
    /// centre tile) with respect to the bits of every iteration, with the
    /// binarizer passing gradients straight through. The extent is the set
    /// of stacks that pixel structurally depends on.
    Gradient { offset: (usize, usize) },
}

/// Extent of a measured field.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Field {
    /// Width and height counted in bit stacks.
    pub width_stacks: usize,
    pub height_stacks: usize,
    /// Inclusive bounding box `(y0, x0, y1, x1)`: pixels for
    /// [`Probe::Flip`], stacks for [`Probe::Gradient`]. `None` when
    /// nothing was influenced.
    pub bbox: Option<(usize, usize, usize, usize)>,
}

impl Field {
    /// The larger of the two extents.
    pub fn size(&self) -> usize {
        self.width_stacks.max(self.height_stacks)
    }
}

type BBox = Option<(usize, usize, usize, usize)>;

fn grow(bbox: BBox, y: usize, x: usize) -> BBox {
    Some(match bbox {
        None => (y, x, y, x),
        Some((y0, x0, y1, x1)) => (y0.min(y), x0.min(x), y1.max(y), x1.max(x)),
    })
}

/// Closed-loop codec run on the eager graph, optionally inverting the
/// centre stack at one iteration. Returns the reconstruction after
/// iteration `t`.
fn flipped_run(
    model: &Model<f64>,
    image: &Tensor<f64>,
    t: usize,
    flip: Option<(usize, usize)>,
) -> Result<Tensor<f64>, CodecError> {
    let config = model.config();
    let layout = model.layout();
    let mut g = Eager::new(model.params());
    let x = g.constant(image.clone());
    let mut enc = Encoder::default();
    let mut dec = Decoder::default();
    let mut recon = None;
    for i in 0..=t {
        let residual = match &recon {
            Some(r) => g.sub(&x, r)?,
            None => x.clone(),
        };
        let mut bits = enc.step(&mut g, layout, config, &residual)?;
        if let Some((_, centre)) = flip.filter(|f| f.0 == i) {
            let mut v = g.value(&bits).clone();
            for d in 0..BINARIZER_DEPTH {
                let b = v.at(0, centre, centre, d);
                v.set(0, centre, centre, d, -b);
            }
            bits = g.constant(v);
        }
        recon = Some(dec.step(&mut g, layout, config, &bits)?);
    }
    Ok(g.value(&recon.expect("at least one iteration")).clone())
}

fn flip_field(model: &Model<f64>, image: &Tensor<f64>, t: usize, centre: usize, mut bbox: BBox) -> Result<BBox, CodecError> {
    let side = image.shape().width();
    let base = flipped_run(model, image, t, None)?;
    for at in 0..=t {
        let out = flipped_run(model, image, t, Some((at, centre)))?;
        for (i, (a, b)) in base.data().iter().zip(out.data()).enumerate() {
            if (a - b).abs() > INFLUENCE_THRESHOLD {
                let p = i / 3;
                bbox = grow(bbox, p / side, p % side);
            }
        }
    }
    Ok(bbox)
}

fn gradient_field(
    model: &Model<f64>,
    image: &Tensor<f64>,
    t: usize,
    centre: usize,
    offset: (usize, usize),
    mut bbox: BBox,
) -> Result<BBox, CodecError> {
    let config = model.config();
    let layout = model.layout();
    let s = image.shape();
    let mut g = Tape::new(model.params());
    let x = g.constant(image.clone());
    let mut enc = Encoder::default();
    let mut dec = Decoder::default();
    let mut recon = None;
    let mut taps = Vec::with_capacity(t + 1);
    for _ in 0..=t {
        let residual = match &recon {
            Some(r) => g.sub(&x, r)?,
            None => x.clone(),
        };
        let bits = enc.step(&mut g, layout, config, &residual)?;
        // A zero leaf added to the bits exposes their gradient without
        // cutting the encoder path.
        let tap = g.leaf(Tensor::zeros(g.value(&bits).shape()));
        let tapped = g.add(&bits, &tap)?;
        taps.push(tap);
        recon = Some(dec.step(&mut g, layout, config, &tapped)?);
    }
    let out = recon.expect("at least one iteration");
    let mut seed = Tensor::zeros(s);
    let (py, px) = (centre * TILE + offset.0 % TILE, centre * TILE + offset.1 % TILE);
    for c in 0..s.channels() {
        seed.set(0, py, px, c, 1.0);
    }
    let grads = g.reverse_from(out, &seed)?;
    for tap in taps {
        let gb = grads.wrt(tap).expect("tap is a leaf");
        let gs = gb.shape();
        for r in 0..gs.height() {
            for c in 0..gs.width() {
                if (0..gs.channels()).any(|d| gb.at(0, r, c, d) != 0.0) {
                    bbox = grow(bbox, r, c);
                }
            }
        }
    }
    Ok(bbox)
}

/// Measures the spread of the codec's dependence on one bit stack after
/// iteration `t` (0-based), on `images` random images of `grid x grid`
/// tiles. The union over images is reported.
pub fn empirical_receptive_field(
    model: &Model<f64>,
    t: usize,
    grid: usize,
    images: usize,
    seed: u64,
    probe: Probe,
) -> Result<Field, SupportError> {
    let config = model.config();
    let support = stage_growth(config.k_diffuse) * t as u64 + stage_growth(config.k_prime);
    let need = 2 * support as usize + 1;
    if grid < need {
        return Err(SupportError::GridTooSmall { grid, support, need });
    }
    let side = grid * TILE;
    let centre = grid / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bbox = None;
    for _ in 0..images {
        let image = Tensor::from_fn(Shape::new(1, side, side, 3), |_| rng.random_range(-0.5..0.5));
        bbox = match probe {
            Probe::Flip => flip_field(model, &image, t, centre, bbox)?,
            Probe::Gradient { offset } => gradient_field(model, &image, t, centre, offset, bbox)?,
        };
    }
    let span = |lo: usize, hi: usize| match probe {
        Probe::Flip => hi / TILE - lo / TILE + 1,
        Probe::Gradient { .. } => hi - lo + 1,
    };
    Ok(match bbox {
        Some((y0, x0, y1, x1)) => Field { width_stacks: span(x0, x1), height_stacks: span(y0, y1), bbox },
        None => Field { width_stacks: 0, height_stacks: 0, bbox: None },
    })
}
