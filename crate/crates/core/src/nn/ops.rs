//! Forward and backward kernels. Pure functions over [`Tensor`]s; the
//! [`Tape`](super::Tape) and [`Eager`](super::Eager) graphs both call into
//! these.

use crate::error::ShapeError;
use crate::tensor::{ensure_same, gemm, MatRef, Scalar, Shape, Tensor};

fn check_conv(x: Shape, k: Shape, bias: Option<Shape>, stride: usize) -> Result<(), ShapeError> {
    let [kh, kw, cin, cout] = k.0;
    if kh != kw || kh % 2 == 0 {
        return Err(ShapeError::KernelSize(k));
    }
    if cin != x.channels() {
        return Err(ShapeError::KernelDepth { kernel: k, expected: cin, actual: x.channels() });
    }
    if stride != 1 && stride != 2 {
        return Err(ShapeError::Stride(stride));
    }
    if let Some(b) = bias {
        if b.numel() != cout {
            return Err(ShapeError::Bias { bias: b.numel(), channels: cout });
        }
    }
    Ok(())
}

/// Output spatial size of a same-padded convolution: `ceil(n / stride)`.
pub fn conv_out_dim(n: usize, stride: usize) -> usize {
    n.div_ceil(stride)
}

struct Geometry {
    h: usize,
    w: usize,
    c: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn new(x: Shape, k: Shape, stride: usize) -> Self {
        let ksize = k.0[0];
        Self {
            h: x.height(),
            w: x.width(),
            c: x.channels(),
            k: ksize,
            stride,
            pad: (ksize - 1) / 2,
            ho: conv_out_dim(x.height(), stride),
            wo: conv_out_dim(x.width(), stride),
        }
    }

    fn patch_len(&self) -> usize {
        self.k * self.k * self.c
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1
    }

    /// Input coordinate read by output `o` at kernel tap `t`, if inside the image.
    #[inline]
    fn src(&self, o: usize, t: usize, n: usize) -> Option<usize> {
        let p = (o * self.stride + t) as isize - self.pad as isize;
        (p >= 0 && (p as usize) < n).then_some(p as usize)
    }
}

fn im2col<T: Scalar>(x: &[T], g: &Geometry, cols: &mut [T]) {
    let plen = g.patch_len();
    for oy in 0..g.ho {
        for ox in 0..g.wo {
            let row = &mut cols[(oy * g.wo + ox) * plen..][..plen];
            for ky in 0..g.k {
                let Some(iy) = g.src(oy, ky, g.h) else {
                    row[ky * g.k * g.c..(ky + 1) * g.k * g.c].fill(T::zero());
                    continue;
                };
                for kx in 0..g.k {
                    let dst = &mut row[(ky * g.k + kx) * g.c..][..g.c];
                    match g.src(ox, kx, g.w) {
                        Some(ix) => dst.copy_from_slice(&x[(iy * g.w + ix) * g.c..][..g.c]),
                        None => dst.fill(T::zero()),
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], g: &Geometry, dx: &mut [T]) {
    let plen = g.patch_len();
    for oy in 0..g.ho {
        for ox in 0..g.wo {
            let row = &cols[(oy * g.wo + ox) * plen..][..plen];
            for ky in 0..g.k {
                let Some(iy) = g.src(oy, ky, g.h) else { continue };
                for kx in 0..g.k {
                    let Some(ix) = g.src(ox, kx, g.w) else { continue };
                    let src = &row[(ky * g.k + kx) * g.c..][..g.c];
                    let dst = &mut dx[(iy * g.w + ix) * g.c..][..g.c];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d = *d + s;
                    }
                }
            }
        }
    }
}

/// Same-padded 2-d cross-correlation (no kernel flip).
///
/// `x` is (b, h, w, cin); `kernel` is (k, k, cin, cout) with odd `k`;
/// output is (b, ceil(h/stride), ceil(w/stride), cout).
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
) -> Result<Tensor<T>, ShapeError> {
    check_conv(x.shape(), kernel.shape(), bias.map(|b| b.shape()), stride)?;
    let g = Geometry::new(x.shape(), kernel.shape(), stride);
    let cout = kernel.shape().channels();
    let batch = x.shape().batch();
    let plen = g.patch_len();
    let rows = g.ho * g.wo;
    let mut out = Tensor::zeros(Shape::new(batch, g.ho, g.wo, cout));
    let kmat = MatRef::new(kernel.data(), plen, cout);
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); rows * plen] };
    let in_len = g.h * g.w * g.c;
    for b in 0..batch {
        let xb = &x.data()[b * in_len..][..in_len];
        let ob = &mut out.data_mut()[b * rows * cout..][..rows * cout];
        if g.is_pointwise() {
            gemm(MatRef::new(xb, rows, plen), kmat, T::zero(), ob);
        } else {
            im2col(xb, &g, &mut cols);
            gemm(MatRef::new(&cols, rows, plen), kmat, T::zero(), ob);
        }
        if let Some(bias) = bias {
            for px in ob.chunks_exact_mut(cout) {
                for (v, &bv) in px.iter_mut().zip(bias.data()) {
                    *v = *v + bv;
                }
            }
        }
    }
    Ok(out)
}

pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub kernel: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    with_bias: bool,
    stride: usize,
    dy: &Tensor<T>,
) -> Result<ConvGrads<T>, ShapeError> {
    check_conv(x.shape(), kernel.shape(), None, stride)?;
    let g = Geometry::new(x.shape(), kernel.shape(), stride);
    let cout = kernel.shape().channels();
    let batch = x.shape().batch();
    ensure_same(dy.shape(), Shape::new(batch, g.ho, g.wo, cout))?;
    let plen = g.patch_len();
    let rows = g.ho * g.wo;
    let in_len = g.h * g.w * g.c;
    let kmat = MatRef::new(kernel.data(), plen, cout);

    let mut dx = Tensor::zeros(x.shape());
    let mut dk = Tensor::zeros(kernel.shape());
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); rows * plen] };
    let mut dcols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); rows * plen] };
    for b in 0..batch {
        let xb = &x.data()[b * in_len..][..in_len];
        let dyb = MatRef::new(&dy.data()[b * rows * cout..][..rows * cout], rows, cout);
        let dxb = &mut dx.data_mut()[b * in_len..][..in_len];
        if g.is_pointwise() {
            gemm(dyb, kmat.t(), T::zero(), dxb);
            gemm(MatRef::new(xb, rows, plen).t(), dyb, T::one(), dk.data_mut());
        } else {
            im2col(xb, &g, &mut cols);
            gemm(MatRef::new(&cols, rows, plen).t(), dyb, T::one(), dk.data_mut());
            gemm(dyb, kmat.t(), T::zero(), &mut dcols);
            col2im(&dcols, &g, dxb);
        }
    }
    let db = with_bias.then(|| {
        let mut db = Tensor::zeros(Shape::new(1, 1, 1, cout));
        for px in dy.data().chunks_exact(cout) {
            for (d, &v) in db.data_mut().iter_mut().zip(px) {
                *d = *d + v;
            }
        }
        db
    });
    Ok(ConvGrads { input: dx, kernel: dk, bias: db })
}

/// Rearranges blocks of 4 channels into 2x2 spatial neighbourhoods:
/// `out[b, 2y+dy, 2x+dx, c] = in[b, y, x, 4c + 2dy + dx]`.
pub fn depth_to_space<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>, ShapeError> {
    let [b, h, w, c] = x.shape().0;
    if c % 4 != 0 {
        return Err(ShapeError::DepthToSpace(c));
    }
    let co = c / 4;
    let mut out = Tensor::zeros(Shape::new(b, 2 * h, 2 * w, co));
    for bi in 0..b {
        for y in 0..h {
            for xx in 0..w {
                for ch in 0..co {
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let v = x.at(bi, y, xx, ch * 4 + dy * 2 + dx);
                            out.set(bi, 2 * y + dy, 2 * xx + dx, ch, v);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Exact inverse of [`depth_to_space`]; also its adjoint.
pub fn space_to_depth<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>, ShapeError> {
    let [b, h, w, c] = x.shape().0;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(ShapeError::SpaceToDepth(x.shape()));
    }
    let mut out = Tensor::zeros(Shape::new(b, h / 2, w / 2, c * 4));
    for bi in 0..b {
        for y in 0..h / 2 {
            for xx in 0..w / 2 {
                for ch in 0..c {
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let v = x.at(bi, 2 * y + dy, 2 * xx + dx, ch);
                            out.set(bi, y, xx, ch * 4 + dy * 2 + dx, v);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[inline]
pub fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

/// Deterministic sign with `sign(0) = +1`.
#[inline]
pub fn sign_pm1<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one()
    } else {
        -T::one()
    }
}
