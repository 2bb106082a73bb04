use thiserror::Error;

use crate::tensor::Shape;

/// Shape or layout violations raised by tensor kernels.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ShapeError {
    #[error("shape mismatch: {left} vs {right}")]
    Mismatch { left: Shape, right: Shape },
    #[error("data length {len} does not match shape {shape}")]
    DataLength { shape: Shape, len: usize },
    #[error("kernel {kernel} expects {expected} input channels, input has {actual}")]
    KernelDepth { kernel: Shape, expected: usize, actual: usize },
    #[error("kernel {0} must be square with an odd spatial size")]
    KernelSize(Shape),
    #[error("unsupported stride {0} (expected 1 or 2)")]
    Stride(usize),
    #[error("bias length {bias} does not match {channels} output channels")]
    Bias { bias: usize, channels: usize },
    #[error("depth-to-space needs channels divisible by 4, got {0}")]
    DepthToSpace(usize),
    #[error("space-to-depth needs even spatial dims, got {0}")]
    SpaceToDepth(Shape),
    #[error("window {h}x{w} at ({y0}, {x0}) is outside {shape}")]
    Window { shape: Shape, y0: usize, x0: usize, h: usize, w: usize },
    #[error("{what}: expected {expected}, got {actual}")]
    Invalid { what: &'static str, expected: String, actual: String },
}
