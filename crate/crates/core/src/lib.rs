//! Progressive recurrent image codec with priming, adaptive bit allocation
//! and rate-distortion tooling.

pub mod bitstream;
pub mod codec;
pub mod error;
pub mod eval;
pub mod image_io;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod rd;
pub mod sabr;
pub mod support;
pub mod tensor;
pub mod train;
