//! Dense NHWC tensor kernels and reverse-mode differentiation.

mod graph;
mod gru;
pub mod ops;
mod params;
mod tape;

pub use graph::{Eager, Graph};
pub use gru::{gru_step, GruParams, GruSpec};
pub use params::{ParamId, ParamSet};
pub use tape::{Gradients, Tape, Var};
