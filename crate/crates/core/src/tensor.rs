//! Dense NHWC tensors and the scalar abstraction shared by every kernel.

use std::fmt;

use num_traits::Float;

use crate::error::ShapeError;

/// Floating-point element type of a [`Tensor`].
///
/// Implemented for `f32` (training) and `f64` (gradient checks, analysis).
pub trait Scalar:
    Float + Default + fmt::Debug + fmt::Display + Send + Sync + std::iter::Sum + 'static
{
    const DTYPE_NAME: &'static str;

    fn of(v: f64) -> Self;

    fn as_f64(self) -> f64;

    /// `C = alpha * A * B + beta * C` with arbitrary row/column strides.
    ///
    /// # Safety
    /// The strides and dimensions must describe memory inside the slices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    const DTYPE_NAME: &'static str = "f32";

    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    const DTYPE_NAME: &'static str = "f64";

    #[inline]
    fn of(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Row-major matrix view used by [`gemm`].
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    /// Read the matrix transposed (swap strides).
    pub transposed: bool,
}

impl<'a, T> MatRef<'a, T> {
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { data, rows, cols, transposed: false }
    }

    pub fn t(self) -> Self {
        Self { transposed: !self.transposed, ..self }
    }

    fn dims(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `out = a * b + beta * out`, where `out` is row-major `m x n`.
pub(crate) fn gemm<T: Scalar>(a: MatRef<'_, T>, b: MatRef<'_, T>, beta: T, out: &mut [T]) {
    let (m, k) = a.dims();
    let (kb, n) = b.dims();
    assert_eq!(k, kb, "gemm inner dimension mismatch");
    assert_eq!(out.len(), m * n, "gemm output size mismatch");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in out.iter_mut() {
            *v = *v * beta;
        }
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: dimensions and strides were derived from slices whose lengths
    // were checked against rows * cols above.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Shape of a 4-d tensor laid out as (batch, height, width, channels).
///
/// Convolution kernels reuse the same type as (kh, kw, in, out).
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape(pub [usize; 4]);

impl Shape {
    pub const fn new(b: usize, h: usize, w: usize, c: usize) -> Self {
        Shape([b, h, w, c])
    }

    pub const fn scalar() -> Self {
        Shape([1, 1, 1, 1])
    }

    pub fn batch(&self) -> usize {
        self.0[0]
    }

    pub fn height(&self) -> usize {
        self.0[1]
    }

    pub fn width(&self) -> usize {
        self.0[2]
    }

    pub fn channels(&self) -> usize {
        self.0[3]
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d] = self.0;
        write!(f, "({a}, {b}, {c}, {d})")
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Self { shape, data: vec![T::zero(); shape.numel()] }
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Self { shape, data: vec![value; shape.numel()] }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self, ShapeError> {
        if data.len() != shape.numel() {
            return Err(ShapeError::DataLength { shape, len: data.len() });
        }
        Ok(Self { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize) -> T) -> Self {
        Self { shape, data: (0..shape.numel()).map(&mut f).collect() }
    }

    pub fn scalar(value: T) -> Self {
        Self { shape: Shape::scalar(), data: vec![value] }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, b: usize, y: usize, x: usize, c: usize) -> usize {
        let [_, h, w, ch] = self.shape.0;
        ((b * h + y) * w + x) * ch + c
    }

    #[inline]
    pub fn at(&self, b: usize, y: usize, x: usize, c: usize) -> T {
        self.data[self.index(b, y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, y: usize, x: usize, c: usize, v: T) {
        let i = self.index(b, y, x, c);
        self.data[i] = v;
    }

    pub fn reshape(self, shape: Shape) -> Result<Self, ShapeError> {
        if shape.numel() != self.data.len() {
            return Err(ShapeError::DataLength { shape, len: self.data.len() });
        }
        Ok(Self { shape, data: self.data })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self, ShapeError> {
        ensure_same(self.shape, other.shape)?;
        Ok(Self {
            shape: self.shape,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Self) -> Result<(), ShapeError> {
        ensure_same(self.shape, other.shape)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor { shape: self.shape, data: self.data.iter().map(|v| U::of(v.as_f64())).collect() }
    }

    /// Copy a spatial window `[y0, y0+h) x [x0, x0+w)` of batch item `b`.
    pub fn crop(&self, b: usize, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self, ShapeError> {
        let [bn, th, tw, c] = self.shape.0;
        if b >= bn || y0 + h > th || x0 + w > tw {
            return Err(ShapeError::Window { shape: self.shape, y0, x0, h, w });
        }
        let mut out = Vec::with_capacity(h * w * c);
        for y in y0..y0 + h {
            let start = self.index(b, y, x0, 0);
            out.extend_from_slice(&self.data[start..start + w * c]);
        }
        Ok(Self { shape: Shape::new(1, h, w, c), data: out })
    }
}

pub(crate) fn ensure_same(a: Shape, b: Shape) -> Result<(), ShapeError> {
    if a != b {
        return Err(ShapeError::Mismatch { left: a, right: b });
    }
    Ok(())
}
