//! Recurrent encoder/decoder, the iteration controller and the code tensor.

mod config;
mod model;

pub use config::{nominal_bpp, ArchitectureConfig, BINARIZER_DEPTH, MAX_ITERATIONS, TILE};
pub use model::{decode_step, encode_step, DecoderState, EncoderState, Layout, Model};

use thiserror::Error;

use crate::error::ShapeError;
use crate::nn::{Eager, Graph};
use crate::tensor::{Scalar, Shape, Tensor};

#[derive(Debug, Error)]
pub enum CodecError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("invalid architecture: {0}")]
    Config(String),
    #[error("image {height}x{width} is not a multiple of {TILE} in both dimensions")]
    Dims { height: usize, width: usize },
    #[error("expected 3 colour channels, got {0}")]
    Channels(usize),
    #[error("code depth {0} does not match the decoder")]
    CodeDepth(usize),
    #[error("iteration count {t} outside 1..={max}")]
    Iterations { t: usize, max: usize },
    #[error("expected a single image, got a batch of {0}")]
    Batch(usize),
    #[error("malformed code tensor: {0}")]
    Codes(String),
}

/// Binary codes of one image, indexed `(iteration, row, col, depth)`.
///
/// Present bits are stored as `+1`/`-1`; `0` marks a bit that was not
/// transmitted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodeTensor {
    iterations: usize,
    rows: usize,
    cols: usize,
    data: Vec<i8>,
}

impl CodeTensor {
    pub fn zeros(iterations: usize, rows: usize, cols: usize) -> Self {
        Self { iterations, rows, cols, data: vec![0; iterations * rows * cols * BINARIZER_DEPTH] }
    }

    pub fn from_vec(iterations: usize, rows: usize, cols: usize, data: Vec<i8>) -> Result<Self, CodecError> {
        if data.len() != iterations * rows * cols * BINARIZER_DEPTH {
            return Err(CodecError::Codes(format!(
                "{} values for {iterations}x{rows}x{cols}x{BINARIZER_DEPTH}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(-1..=1).contains(*v)) {
            return Err(CodecError::Codes(format!("value {v} is not -1, 0 or +1")));
        }
        Ok(Self { iterations, rows, cols, data })
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[i8] {
        &self.data
    }

    /// Total bit positions, present or not.
    pub fn capacity_bits(&self) -> usize {
        self.data.len()
    }

    fn offset(&self, i: usize, r: usize, c: usize) -> usize {
        assert!(i < self.iterations && r < self.rows && c < self.cols, "stack index out of range");
        ((i * self.rows + r) * self.cols + c) * BINARIZER_DEPTH
    }

    pub fn stack(&self, i: usize, r: usize, c: usize) -> &[i8] {
        let o = self.offset(i, r, c);
        &self.data[o..o + BINARIZER_DEPTH]
    }

    pub fn stack_mut(&mut self, i: usize, r: usize, c: usize) -> &mut [i8] {
        let o = self.offset(i, r, c);
        &mut self.data[o..o + BINARIZER_DEPTH]
    }

    /// First `t` iterations.
    pub fn truncated(&self, t: usize) -> Self {
        let t = t.min(self.iterations);
        let len = t * self.rows * self.cols * BINARIZER_DEPTH;
        Self { iterations: t, rows: self.rows, cols: self.cols, data: self.data[..len].to_vec() }
    }

    /// Decoder input for iteration `i`, with absent bits replaced by `fill`.
    pub fn slice<T: Scalar>(&self, i: usize, fill: T) -> Tensor<T> {
        let len = self.rows * self.cols * BINARIZER_DEPTH;
        let src = &self.data[i * len..(i + 1) * len];
        let data = src
            .iter()
            .map(|&v| match v {
                0 => fill,
                v => T::of(v as f64),
            })
            .collect();
        Tensor::from_vec(Shape::new(1, self.rows, self.cols, BINARIZER_DEPTH), data).expect("slice length")
    }

    fn push_iteration<T: Scalar>(&mut self, bits: &Tensor<T>) {
        self.data.extend(bits.data().iter().map(|&v| if v > T::zero() { 1i8 } else { -1 }));
        self.iterations += 1;
    }
}

/// Encoder side of the iteration controller.
///
/// Before iteration 0 it runs `k_prime` discarded passes; before every
/// later iteration it runs `k_diffuse` discarded passes on the current
/// residual.
pub struct Encoder<N> {
    state: EncoderState<N>,
    iteration: usize,
    passes: usize,
}

impl<N: Clone> Default for Encoder<N> {
    fn default() -> Self {
        Self { state: EncoderState::default(), iteration: 0, passes: 0 }
    }
}

impl<N: Clone> Encoder<N> {
    pub fn step<T: Scalar, G: Graph<T, Node = N>>(
        &mut self,
        g: &mut G,
        layout: &Layout,
        config: &ArchitectureConfig,
        residual: &N,
    ) -> Result<N, CodecError> {
        let warmup = if self.iteration == 0 { config.k_prime } else { config.k_diffuse };
        for _ in 0..warmup {
            encode_step(g, layout, residual, &mut self.state)?;
            self.passes += 1;
        }
        let bits = encode_step(g, layout, residual, &mut self.state)?;
        self.passes += 1;
        self.iteration += 1;
        Ok(bits)
    }

    /// Encoder passes run so far, discarded ones included.
    pub fn passes(&self) -> usize {
        self.passes
    }
}

/// Decoder side of the iteration controller; mirrors [`Encoder`] and keeps
/// the clamped running reconstruction.
pub struct Decoder<N> {
    state: DecoderState<N>,
    recon: Option<N>,
    iteration: usize,
    passes: usize,
}

impl<N: Clone> Default for Decoder<N> {
    fn default() -> Self {
        Self { state: DecoderState::default(), recon: None, iteration: 0, passes: 0 }
    }
}

impl<N: Clone> Decoder<N> {
    /// Consumes one iteration of codes and returns the new reconstruction
    /// in [-0.5, 0.5].
    pub fn step<T: Scalar, G: Graph<T, Node = N>>(
        &mut self,
        g: &mut G,
        layout: &Layout,
        config: &ArchitectureConfig,
        bits: &N,
    ) -> Result<N, CodecError> {
        let warmup = if self.iteration == 0 { config.k_prime } else { config.k_diffuse };
        for _ in 0..warmup {
            decode_step(g, layout, bits, &mut self.state)?;
            self.passes += 1;
        }
        let delta = decode_step(g, layout, bits, &mut self.state)?;
        self.passes += 1;
        self.iteration += 1;
        let sum = match &self.recon {
            Some(prev) => g.add(prev, &delta)?,
            None => delta,
        };
        let half = T::of(0.5);
        let recon = g.clamp(&sum, -half, half);
        self.recon = Some(recon.clone());
        Ok(recon)
    }

    pub fn passes(&self) -> usize {
        self.passes
    }
}

/// Result of running encoder and decoder replica together.
pub struct Unrolled<N> {
    pub bits: Vec<N>,
    pub reconstructions: Vec<N>,
    pub encoder_passes: usize,
    pub decoder_passes: usize,
}

/// Runs `t` progressive iterations on `image` (values in [-0.5, 0.5]).
///
/// Iteration 0 encodes the image itself; each later iteration encodes the
/// residual between the image and the running reconstruction.
pub fn unroll<T: Scalar, G: Graph<T>>(
    g: &mut G,
    model: &Model<T>,
    image: &G::Node,
    t: usize,
) -> Result<Unrolled<G::Node>, CodecError> {
    let config = model.config();
    if t == 0 || t > config.max_iterations {
        return Err(CodecError::Iterations { t, max: config.max_iterations });
    }
    let layout = model.layout();
    let mut encoder = Encoder::default();
    let mut decoder = Decoder::default();
    let mut bits = Vec::with_capacity(t);
    let mut reconstructions: Vec<G::Node> = Vec::with_capacity(t);
    for _ in 0..t {
        let residual = match reconstructions.last() {
            Some(r) => g.sub(image, r)?,
            None => image.clone(),
        };
        let b = encoder.step(g, layout, config, &residual)?;
        let r = decoder.step(g, layout, config, &b)?;
        bits.push(b);
        reconstructions.push(r);
    }
    Ok(Unrolled {
        bits,
        reconstructions,
        encoder_passes: encoder.passes(),
        decoder_passes: decoder.passes(),
    })
}

/// Codes plus the compressor's own reconstruction after every iteration.
pub struct Compressed<T> {
    pub codes: CodeTensor,
    pub reconstructions: Vec<Tensor<T>>,
    pub encoder_passes: usize,
}

/// Encodes a single `(1, h, w, 3)` image with values in [-0.5, 0.5].
pub fn compress<T: Scalar>(model: &Model<T>, image: &Tensor<T>, t: usize) -> Result<Compressed<T>, CodecError> {
    let shape = image.shape();
    if shape.batch() != 1 {
        return Err(CodecError::Batch(shape.batch()));
    }
    let mut g = Eager::new(model.params());
    let x = g.constant(image.clone());
    let run = unroll(&mut g, model, &x, t)?;
    let mut codes = CodeTensor::zeros(0, shape.height() / TILE, shape.width() / TILE);
    for b in &run.bits {
        codes.push_iteration(b);
    }
    Ok(Compressed {
        codes,
        reconstructions: run.reconstructions.iter().map(|r| (**r).clone()).collect(),
        encoder_passes: run.encoder_passes,
    })
}

/// Reconstruction after each iteration of `codes`, absent bits read as
/// `fill`.
pub fn decompress_progressive<T: Scalar>(
    model: &Model<T>,
    codes: &CodeTensor,
    fill: T,
) -> Result<Vec<Tensor<T>>, CodecError> {
    let config = model.config();
    let t = codes.iterations();
    if t == 0 || t > config.max_iterations {
        return Err(CodecError::Iterations { t, max: config.max_iterations });
    }
    if codes.rows() == 0 || codes.cols() == 0 {
        return Err(CodecError::Codes("empty tile grid".into()));
    }
    let mut g = Eager::new(model.params());
    let mut decoder = Decoder::default();
    let mut out = Vec::with_capacity(t);
    for i in 0..t {
        let bits = g.constant(codes.slice(i, fill));
        let r = decoder.step(&mut g, model.layout(), config, &bits)?;
        out.push((*r).clone());
    }
    Ok(out)
}

/// Final reconstruction of `codes` in [-0.5, 0.5].
pub fn decompress<T: Scalar>(model: &Model<T>, codes: &CodeTensor, fill: T) -> Result<Tensor<T>, CodecError> {
    Ok(decompress_progressive(model, codes, fill)?.pop().expect("at least one iteration"))
}

/// Maps [0, 1] pixels to the codec's centred range.
pub fn center<T: Scalar>(image: &Tensor<T>) -> Tensor<T> {
    let half = T::of(0.5);
    image.map(|v| v - half)
}

/// Inverse of [`center`].
pub fn uncenter<T: Scalar>(image: &Tensor<T>) -> Tensor<T> {
    let half = T::of(0.5);
    image.map(|v| v + half)
}
