use super::graph::Graph;
use super::params::{ParamId, ParamSet};
use crate::error::ShapeError;
use crate::tensor::{Scalar, Shape, Tensor};

/// Geometry of one convolutional GRU layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GruSpec {
    pub input_depth: usize,
    pub hidden_depth: usize,
    pub input_kernel: usize,
    pub hidden_kernel: usize,
    /// Stride of the input convolutions; hidden convolutions always use 1.
    pub stride: usize,
}

impl GruSpec {
    pub fn input_kernel_shape(&self) -> Shape {
        Shape::new(self.input_kernel, self.input_kernel, self.input_depth, self.hidden_depth)
    }

    pub fn hidden_kernel_shape(&self) -> Shape {
        Shape::new(self.hidden_kernel, self.hidden_kernel, self.hidden_depth, self.hidden_depth)
    }

    pub fn bias_shape(&self) -> Shape {
        Shape::new(1, 1, 1, self.hidden_depth)
    }
}

/// Parameter handles for one GRU layer. Gate biases live on the input
/// convolutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GruParams {
    pub spec: GruSpec,
    pub w: ParamId,
    pub wz: ParamId,
    pub wr: ParamId,
    pub u: ParamId,
    pub uz: ParamId,
    pub ur: ParamId,
    pub b: ParamId,
    pub bz: ParamId,
    pub br: ParamId,
}

impl GruParams {
    /// Registers zero-valued tensors named `{prefix}.w`, `{prefix}.uz`, ...
    pub fn insert_zeros<T: Scalar>(set: &mut ParamSet<T>, prefix: &str, spec: GruSpec) -> Self {
        let mut add = |suffix: &str, shape: Shape| set.insert(format!("{prefix}.{suffix}"), Tensor::zeros(shape));
        let (wk, uk, bs) = (spec.input_kernel_shape(), spec.hidden_kernel_shape(), spec.bias_shape());
        Self {
            spec,
            w: add("w", wk),
            wz: add("wz", wk),
            wr: add("wr", wk),
            u: add("u", uk),
            uz: add("uz", uk),
            ur: add("ur", uk),
            b: add("b", bs),
            bz: add("bz", bs),
            br: add("br", bs),
        }
    }

    pub fn input_kernels(&self) -> [ParamId; 3] {
        [self.w, self.wz, self.wr]
    }

    pub fn hidden_kernels(&self) -> [ParamId; 3] {
        [self.u, self.uz, self.ur]
    }

    pub fn biases(&self) -> [ParamId; 3] {
        [self.b, self.bz, self.br]
    }

    /// Shape of the hidden state for an input of the given shape.
    pub fn hidden_shape(&self, input: Shape) -> Shape {
        let s = self.spec.stride;
        Shape::new(input.batch(), input.height().div_ceil(s), input.width().div_ceil(s), self.spec.hidden_depth)
    }
}

/// One GRU update; the returned state is also the layer output.
///
/// ```text
/// z  = sigmoid(Wz*x + bz + Uz*h)
/// r  = sigmoid(Wr*x + br + Ur*h)
/// h~ = tanh(W*x + b + U*(r . h))
/// h' = h + z . (h~ - h)
/// ```
pub fn gru_step<T: Scalar, G: Graph<T>>(
    g: &mut G,
    x: &G::Node,
    h: &G::Node,
    p: &GruParams,
) -> Result<G::Node, ShapeError> {
    let stride = p.spec.stride;
    let expected = p.hidden_shape(g.value(x).shape());
    let actual = g.value(h).shape();
    if actual != expected {
        return Err(ShapeError::Mismatch { left: expected, right: actual });
    }

    let gate = |g: &mut G, w: ParamId, b: ParamId, u: ParamId, hin: &G::Node| -> Result<G::Node, ShapeError> {
        let (w, b, u) = (g.param(w), g.param(b), g.param(u));
        let wx = g.conv2d(x, &w, Some(&b), stride)?;
        let uh = g.conv2d(hin, &u, None, 1)?;
        g.add(&wx, &uh)
    };

    let z = gate(g, p.wz, p.bz, p.uz, h)?;
    let z = g.sigmoid(&z);
    let r = gate(g, p.wr, p.br, p.ur, h)?;
    let r = g.sigmoid(&r);
    let rh = g.mul(&r, h)?;
    let cand = gate(g, p.w, p.b, p.u, &rh)?;
    let cand = g.tanh(&cand);
    let diff = g.sub(&cand, h)?;
    let step = g.mul(&z, &diff)?;
    g.add(h, &step)
}
