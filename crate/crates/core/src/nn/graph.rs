use std::sync::Arc;

use super::ops;
use super::params::{ParamId, ParamSet};
use crate::error::ShapeError;
use crate::tensor::{Scalar, Tensor};

/// Operations the codec is written against.
///
/// [`Tape`](super::Tape) records every call for a reverse pass;
/// [`Eager`] evaluates immediately and keeps nothing alive beyond the
/// returned nodes.
pub trait Graph<T: Scalar> {
    type Node: Clone;

    fn params(&self) -> &ParamSet<T>;

    fn constant(&mut self, value: Tensor<T>) -> Self::Node;

    fn param(&mut self, id: ParamId) -> Self::Node;

    fn value<'a>(&'a self, node: &'a Self::Node) -> &'a Tensor<T>;

    fn conv2d(
        &mut self,
        x: &Self::Node,
        kernel: &Self::Node,
        bias: Option<&Self::Node>,
        stride: usize,
    ) -> Result<Self::Node, ShapeError>;

    fn depth_to_space(&mut self, x: &Self::Node) -> Result<Self::Node, ShapeError>;

    fn add(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node, ShapeError>;

    fn sub(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node, ShapeError>;

    fn mul(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node, ShapeError>;

    fn sigmoid(&mut self, x: &Self::Node) -> Self::Node;

    fn tanh(&mut self, x: &Self::Node) -> Self::Node;

    /// Sign quantizer with a straight-through gradient.
    fn binarize(&mut self, x: &Self::Node) -> Self::Node;

    fn clamp(&mut self, x: &Self::Node, lo: T, hi: T) -> Self::Node;
}

/// Immediate-mode evaluation without gradient bookkeeping.
pub struct Eager<'p, T> {
    params: &'p ParamSet<T>,
    cache: Vec<Option<Arc<Tensor<T>>>>,
}

impl<'p, T: Scalar> Eager<'p, T> {
    pub fn new(params: &'p ParamSet<T>) -> Self {
        Self { params, cache: vec![None; params.len()] }
    }
}

pub(crate) fn binarize_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(ops::sign_pm1)
}

impl<T: Scalar> Graph<T> for Eager<'_, T> {
    type Node = Arc<Tensor<T>>;

    fn params(&self) -> &ParamSet<T> {
        self.params
    }

    fn constant(&mut self, value: Tensor<T>) -> Self::Node {
        Arc::new(value)
    }

    fn param(&mut self, id: ParamId) -> Self::Node {
        self.cache[id.0].get_or_insert_with(|| Arc::new(self.params.get(id).clone())).clone()
    }

    fn value<'a>(&'a self, node: &'a Self::Node) -> &'a Tensor<T> {
        node
    }

    fn conv2d(
        &mut self,
        x: &Self::Node,
        kernel: &Self::Node,
        bias: Option<&Self::Node>,
        stride: usize,
    ) -> Result<Self::Node, ShapeError> {
        ops::conv2d(x, kernel, bias.map(|b| b.as_ref()), stride).map(Arc::new)
    }

    fn depth_to_space(&mut self, x: &Self::Node) -> Result<Self::Node, ShapeError> {
        ops::depth_to_space(x).map(Arc::new)
    }

    fn add(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node, ShapeError> {
        a.zip_map(b, |p, q| p + q).map(Arc::new)
    }

    fn sub(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node, ShapeError> {
        a.zip_map(b, |p, q| p - q).map(Arc::new)
    }

    fn mul(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node, ShapeError> {
        a.zip_map(b, |p, q| p * q).map(Arc::new)
    }

    fn sigmoid(&mut self, x: &Self::Node) -> Self::Node {
        Arc::new(x.map(ops::sigmoid))
    }

    fn tanh(&mut self, x: &Self::Node) -> Self::Node {
        Arc::new(x.map(T::tanh))
    }

    fn binarize(&mut self, x: &Self::Node) -> Self::Node {
        Arc::new(binarize_forward(x))
    }

    fn clamp(&mut self, x: &Self::Node, lo: T, hi: T) -> Self::Node {
        Arc::new(x.map(|v| v.max(lo).min(hi)))
    }
}
