//! Reverse-mode differentiation over a linear record of operations.

use std::collections::HashMap;

use super::graph::{binarize_forward, Graph};
use super::ops;
use super::params::{ParamId, ParamSet};
use crate::error::ShapeError;
use crate::tensor::{ensure_same, Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Constant,
    Leaf,
    Param(ParamId),
    Conv2d { x: Var, kernel: Var, bias: Option<Var>, stride: usize },
    DepthToSpace(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Binarize(Var),
    Clamp { x: Var, lo: T, hi: T },
    Scale(Var, T),
    WeightedAbsSum { y: Var, target: Tensor<T>, weights: Tensor<T> },
}

struct Record<T> {
    op: Op<T>,
    /// `None` for parameters, which are read from the bound [`ParamSet`].
    value: Option<Tensor<T>>,
}

/// Gradients produced by a reverse pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    params: Vec<Tensor<T>>,
    leaves: HashMap<Var, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros(params: &ParamSet<T>) -> Self {
        Self {
            params: params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect(),
            leaves: HashMap::new(),
        }
    }

    pub fn param(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0]
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn into_params(self) -> Vec<Tensor<T>> {
        self.params
    }

    /// Gradient with respect to a leaf created by [`Tape::leaf`].
    pub fn wrt(&self, var: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&var)
    }
}

/// Single-writer record of a differentiable computation.
///
/// Parameters are bound at construction; each parameter is recorded at most
/// once so its gradient accumulates in one place.
pub struct Tape<'p, T> {
    params: &'p ParamSet<T>,
    records: Vec<Record<T>>,
    param_vars: Vec<Option<Var>>,
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new(params: &'p ParamSet<T>) -> Self {
        Self { params, records: Vec::new(), param_vars: vec![None; params.len()] }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> Var {
        self.records.push(Record { op, value: Some(value) });
        Var(self.records.len() - 1)
    }

    /// Differentiable input; its gradient is reported by [`Gradients::wrt`].
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let v = self.value(&x).map(|v| v * factor);
        self.push(Op::Scale(x, factor), v)
    }

    /// `sum_i weights_i * |y_i - target_i|` as a (1,1,1,1) scalar.
    ///
    /// The weights are constants: no gradient flows into them.
    pub fn weighted_abs_sum(
        &mut self,
        y: Var,
        target: Tensor<T>,
        weights: Tensor<T>,
    ) -> Result<Var, ShapeError> {
        let yv = self.value(&y);
        ensure_same(yv.shape(), target.shape())?;
        ensure_same(yv.shape(), weights.shape())?;
        let total: T = yv
            .data()
            .iter()
            .zip(target.data())
            .zip(weights.data())
            .map(|((&a, &b), &w)| w * (a - b).abs())
            .sum();
        Ok(self.push(Op::WeightedAbsSum { y, target, weights }, Tensor::scalar(total)))
    }

    /// Reverse pass seeded at the most recently recorded node with
    /// `d(out)/d(out) = seed` broadcast over its shape.
    ///
    /// An empty tape yields zero gradients.
    pub fn reverse_pass(&self, seed: T) -> Gradients<T> {
        match self.records.len() {
            0 => Gradients::zeros(self.params),
            n => {
                let out = Var(n - 1);
                let seed = Tensor::full(self.value(&out).shape(), seed);
                self.reverse_from(out, &seed).expect("seed shape built from output")
            }
        }
    }

    /// Reverse pass computing gradients of `sum(seed * output)`.
    ///
    /// Records are visited in exact reverse order of recording. The tape is
    /// left untouched, so repeated passes give identical results.
    pub fn reverse_from(&self, output: Var, seed: &Tensor<T>) -> Result<Gradients<T>, ShapeError> {
        ensure_same(self.value(&output).shape(), seed.shape())?;
        let mut result = Gradients::zeros(self.params);
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(output.0 + 1);
        grads.resize_with(output.0 + 1, || None);
        grads[output.0] = Some(seed.clone());

        for idx in (0..=output.0).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            let record = &self.records[idx];
            match &record.op {
                Op::Constant => {}
                Op::Leaf => {
                    result.leaves.insert(Var(idx), dy);
                }
                Op::Param(id) => result.params[id.0].add_assign(&dy)?,
                Op::Conv2d { x, kernel, bias, stride } => {
                    let g = ops::conv2d_backward(
                        self.value(x),
                        self.value(kernel),
                        bias.is_some(),
                        *stride,
                        &dy,
                    )?;
                    accumulate(&mut grads, *x, g.input)?;
                    accumulate(&mut grads, *kernel, g.kernel)?;
                    if let (Some(b), Some(db)) = (bias, g.bias) {
                        accumulate(&mut grads, *b, db)?;
                    }
                }
                Op::DepthToSpace(x) => accumulate(&mut grads, *x, ops::space_to_depth(&dy)?)?,
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, dy.clone())?;
                    accumulate(&mut grads, *a, dy)?;
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, dy.map(|v| -v))?;
                    accumulate(&mut grads, *a, dy)?;
                }
                Op::Mul(a, b) => {
                    let da = dy.zip_map(self.value(b), |g, v| g * v)?;
                    let db = dy.zip_map(self.value(a), |g, v| g * v)?;
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::Sigmoid(x) => {
                    let y = record_value(record);
                    let dx = dy.zip_map(y, |g, s| g * s * (T::one() - s))?;
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::Tanh(x) => {
                    let y = record_value(record);
                    let dx = dy.zip_map(y, |g, t| g * (T::one() - t * t))?;
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::Binarize(x) => accumulate(&mut grads, *x, dy)?,
                Op::Clamp { x, lo, hi } => {
                    let (lo, hi) = (*lo, *hi);
                    let dx = dy.zip_map(self.value(x), |g, v| {
                        if v >= lo && v <= hi {
                            g
                        } else {
                            T::zero()
                        }
                    })?;
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::Scale(x, factor) => {
                    let f = *factor;
                    accumulate(&mut grads, *x, dy.map(|g| g * f))?;
                }
                Op::WeightedAbsSum { y, target, weights } => {
                    let g = dy.data()[0];
                    let yv = self.value(y);
                    let data = yv
                        .data()
                        .iter()
                        .zip(target.data())
                        .zip(weights.data())
                        .map(|((&a, &b), &w)| {
                            let d = a - b;
                            if d > T::zero() {
                                g * w
                            } else if d < T::zero() {
                                -(g * w)
                            } else {
                                T::zero()
                            }
                        })
                        .collect();
                    accumulate(&mut grads, *y, Tensor::from_vec(yv.shape(), data)?)?;
                }
            }
        }
        Ok(result)
    }
}

fn record_value<T>(record: &Record<T>) -> &Tensor<T> {
    record.value.as_ref().expect("non-parameter records keep their value")
}

fn accumulate<T: Scalar>(
    grads: &mut [Option<Tensor<T>>],
    var: Var,
    delta: Tensor<T>,
) -> Result<(), ShapeError> {
    match &mut grads[var.0] {
        Some(g) => g.add_assign(&delta),
        slot @ None => {
            *slot = Some(delta);
            Ok(())
        }
    }
}

impl<T: Scalar> Graph<T> for Tape<'_, T> {
    type Node = Var;

    fn params(&self) -> &ParamSet<T> {
        self.params
    }

    fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Constant, value)
    }

    fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.records.push(Record { op: Op::Param(id), value: None });
        let v = Var(self.records.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    fn value<'a>(&'a self, node: &'a Var) -> &'a Tensor<T> {
        let record = &self.records[node.0];
        match (&record.op, &record.value) {
            (Op::Param(id), _) => self.params.get(*id),
            (_, Some(v)) => v,
            (_, None) => unreachable!("only parameter records omit their value"),
        }
    }

    fn conv2d(
        &mut self,
        x: &Var,
        kernel: &Var,
        bias: Option<&Var>,
        stride: usize,
    ) -> Result<Var, ShapeError> {
        let out = ops::conv2d(self.value(x), self.value(kernel), bias.map(|b| self.value(b)), stride)?;
        Ok(self.push(Op::Conv2d { x: *x, kernel: *kernel, bias: bias.copied(), stride }, out))
    }

    fn depth_to_space(&mut self, x: &Var) -> Result<Var, ShapeError> {
        let out = ops::depth_to_space(self.value(x))?;
        Ok(self.push(Op::DepthToSpace(*x), out))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var, ShapeError> {
        let out = self.value(a).zip_map(self.value(b), |p, q| p + q)?;
        Ok(self.push(Op::Add(*a, *b), out))
    }

    fn sub(&mut self, a: &Var, b: &Var) -> Result<Var, ShapeError> {
        let out = self.value(a).zip_map(self.value(b), |p, q| p - q)?;
        Ok(self.push(Op::Sub(*a, *b), out))
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var, ShapeError> {
        let out = self.value(a).zip_map(self.value(b), |p, q| p * q)?;
        Ok(self.push(Op::Mul(*a, *b), out))
    }

    fn sigmoid(&mut self, x: &Var) -> Var {
        let out = self.value(x).map(ops::sigmoid);
        self.push(Op::Sigmoid(*x), out)
    }

    fn tanh(&mut self, x: &Var) -> Var {
        let out = self.value(x).map(T::tanh);
        self.push(Op::Tanh(*x), out)
    }

    fn binarize(&mut self, x: &Var) -> Var {
        let out = binarize_forward(self.value(x));
        self.push(Op::Binarize(*x), out)
    }

    fn clamp(&mut self, x: &Var, lo: T, hi: T) -> Var {
        let out = self.value(x).map(|v| v.max(lo).min(hi));
        self.push(Op::Clamp { x: *x, lo, hi }, out)
    }
}
