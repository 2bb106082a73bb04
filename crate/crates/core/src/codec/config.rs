use serde::{Deserialize, Serialize};

use super::CodecError;

/// Number of binary codes emitted per 16x16 tile per iteration.
pub const BINARIZER_DEPTH: usize = 32;
/// Spatial reduction from image pixels to bit stacks.
pub const TILE: usize = 16;
pub const MAX_ITERATIONS: usize = 16;

/// Layer layout of the encoder and decoder.
///
/// Encoder: a strided 3x3 convolution (`E0`), three strided GRU layers
/// (`E1..E3`) and a 1x1 projection to the binarizer. Decoder: a 1x1
/// convolution (`D0`), four GRU layers (`D1..D4`) each followed by 2x2
/// depth-to-space, then a 1x1 projection to RGB.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchitectureConfig {
    /// Output depths of `E0..E3`.
    pub encoder_depths: [usize; 4],
    /// Input kernel sizes of `E0..E3`.
    pub encoder_input_kernels: [usize; 4],
    /// Hidden kernel sizes of `E1..E3`.
    pub encoder_hidden_kernels: [usize; 3],
    /// Output depth of `D0`.
    pub decoder_conv_depth: usize,
    /// Hidden depths of `D1..D4`; each must be divisible by 4.
    pub decoder_depths: [usize; 4],
    /// Input kernel sizes of `D0..D4`.
    pub decoder_input_kernels: [usize; 5],
    /// Hidden kernel sizes of `D1..D4`.
    pub decoder_hidden_kernels: [usize; 4],
    pub binarizer_depth: usize,
    pub max_iterations: usize,
    /// Discarded recurrent steps before the first emitted iteration.
    pub k_prime: usize,
    /// Discarded recurrent steps before every later iteration.
    pub k_diffuse: usize,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        Self {
            encoder_depths: [64, 256, 256, 256],
            encoder_input_kernels: [3, 3, 3, 3],
            encoder_hidden_kernels: [1, 1, 1],
            decoder_conv_depth: 256,
            decoder_depths: [256, 256, 128, 64],
            decoder_input_kernels: [1, 3, 3, 3, 3],
            decoder_hidden_kernels: [1, 1, 3, 3],
            binarizer_depth: BINARIZER_DEPTH,
            max_iterations: MAX_ITERATIONS,
            k_prime: 0,
            k_diffuse: 0,
        }
    }
}

impl ArchitectureConfig {
    /// Reduced depths that train in minutes on a single core.
    pub fn desk() -> Self {
        Self {
            encoder_depths: [32, 64, 64, 64],
            decoder_conv_depth: 64,
            decoder_depths: [64, 64, 32, 32],
            ..Self::default()
        }
    }

    pub fn with_priming(mut self, k_prime: usize, k_diffuse: usize) -> Self {
        self.k_prime = k_prime;
        self.k_diffuse = k_diffuse;
        self
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        let bad = |msg: String| Err(CodecError::Config(msg));
        if self.binarizer_depth != BINARIZER_DEPTH {
            return bad(format!("binarizer depth must be {BINARIZER_DEPTH}, got {}", self.binarizer_depth));
        }
        if self.max_iterations == 0 || self.max_iterations > MAX_ITERATIONS {
            return bad(format!("max_iterations must be in 1..={MAX_ITERATIONS}, got {}", self.max_iterations));
        }
        let depths = self.encoder_depths.iter().chain(&self.decoder_depths).chain([&self.decoder_conv_depth]);
        if depths.clone().any(|&d| d == 0) {
            return bad("layer depths must be positive".into());
        }
        if let Some(d) = self.decoder_depths.iter().find(|&&d| d % 4 != 0) {
            return bad(format!("decoder GRU depth {d} is not divisible by 4"));
        }
        let kernels = self
            .encoder_input_kernels
            .iter()
            .chain(&self.encoder_hidden_kernels)
            .chain(&self.decoder_input_kernels)
            .chain(&self.decoder_hidden_kernels);
        if let Some(k) = kernels.clone().find(|&&k| k % 2 == 0) {
            return bad(format!("kernel size {k} must be odd"));
        }
        Ok(())
    }

    /// Canonical JSON used for checkpoint headers and digests.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Short stable fingerprint of the layer layout.
    ///
    /// Priming and diffusion counts are runtime choices and do not change
    /// the parameter set, so they are excluded.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut layout = self.clone();
        layout.k_prime = 0;
        layout.k_diffuse = 0;
        let hash = Sha256::digest(layout.to_canonical_json().as_bytes());
        hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Nominal rate of `t` iterations: 32 bits per 256 pixels each.
pub fn nominal_bpp(t: usize) -> f64 {
    (t * BINARIZER_DEPTH) as f64 / (TILE * TILE) as f64
}
