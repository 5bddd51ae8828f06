//! Dense row-major tensors and the numeric kernels the rest of the crate is
//! built on.
//!
//! Layout is contiguous row-major; image batches are NCHW. "Convolution" is
//! cross-correlation (no kernel flip) with zero padding. Only scalar
//! broadcasting exists; every binary op otherwise requires equal shapes.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Floating-point element type. `f32` is the training type, `f64` is used for
/// gradient checking.
pub trait Element: Float + Default + Debug + Display + Send + Sync + Sum + 'static {
    const NAME: &'static str;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c = a · b` (or `c += a · b` when `accumulate`), where `c` is a
    /// contiguous row-major `a.rows × b.cols` buffer.
    fn gemm(a: MatRef<'_, Self>, b: MatRef<'_, Self>, c: &mut [Self], accumulate: bool);
}

/// Borrowed strided matrix view used by [`Element::gemm`].
#[derive(Clone, Copy)]
pub struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a, T> MatRef<'a, T> {
    pub fn row_major(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// The transpose of a row-major `rows × cols` buffer, as a `cols × rows`
    /// view.
    pub fn transposed(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows: cols,
            cols: rows,
            row_stride: 1,
            col_stride: cols,
        }
    }

    fn max_offset(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride
        }
    }
}

fn check_gemm<T>(a: &MatRef<'_, T>, b: &MatRef<'_, T>, c: &[T]) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    assert_eq!(c.len(), a.rows * b.cols, "gemm output size");
    if a.rows * a.cols > 0 {
        assert!(a.max_offset() < a.data.len(), "gemm lhs view out of bounds");
    }
    if b.rows * b.cols > 0 {
        assert!(b.max_offset() < b.data.len(), "gemm rhs view out of bounds");
    }
}

impl Element for f32 {
    const NAME: &'static str = "f32";

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    fn gemm(a: MatRef<'_, f32>, b: MatRef<'_, f32>, c: &mut [f32], accumulate: bool) {
        check_gemm(&a, &b, c);
        if a.rows == 0 || b.cols == 0 {
            return;
        }
        if a.cols == 0 {
            if !accumulate {
                c.fill(0.0);
            }
            return;
        }
        let beta = if accumulate { 1.0 } else { 0.0 };
        // SAFETY: check_gemm verified that every strided access of both views
        // stays inside its slice and that `c` holds exactly rows × cols
        // elements addressed with row stride `b.cols`.
        unsafe {
            matrixmultiply::sgemm(
                a.rows,
                a.cols,
                b.cols,
                1.0,
                a.data.as_ptr(),
                a.row_stride as isize,
                a.col_stride as isize,
                b.data.as_ptr(),
                b.row_stride as isize,
                b.col_stride as isize,
                beta,
                c.as_mut_ptr(),
                b.cols as isize,
                1,
            );
        }
    }
}

impl Element for f64 {
    const NAME: &'static str = "f64";

    fn from_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

    /// Plain dot-product loop: each output is summed from zero in ascending
    /// inner index, so 64-bit results are bit-identical to a textbook loop
    /// nest over the same index order.
    fn gemm(a: MatRef<'_, f64>, b: MatRef<'_, f64>, c: &mut [f64], accumulate: bool) {
        check_gemm(&a, &b, c);
        let n = b.cols;
        for i in 0..a.rows {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..a.cols {
                    s += a.data[i * a.row_stride + p * a.col_stride]
                        * b.data[p * b.row_stride + j * b.col_stride];
                }
                let out = &mut c[i * n + j];
                *out = if accumulate { *out + s } else { s };
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        dims.iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::InvalidShape(format!("{dims:?} overflows usize")))?;
        Ok(Self(dims.to_vec()))
    }

    pub fn scalar() -> Self {
        Self(Vec::new())
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

/// How [`Tensor::create`] fills a new tensor.
#[derive(Debug, Clone, PartialEq)]
pub enum FillRule {
    Constant(f64),
    Uniform { lo: f64, hi: f64, seed: u64 },
    FromValues(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Max,
}

/// Right-hand side of an elementwise op: a same-shape tensor or a scalar.
#[derive(Debug, Clone, Copy)]
pub enum Operand<'a, T> {
    Tensor(&'a Tensor<T>),
    Scalar(T),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Argmax,
}

impl<T: Element> Tensor<T> {
    pub fn create(dims: &[usize], fill: FillRule) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let n = shape.numel();
        let data = match fill {
            FillRule::Constant(c) => vec![T::from_f64(c); n],
            FillRule::Uniform { lo, hi, seed } => {
                let mut rng = Rng::new(seed);
                (0..n).map(|_| T::from_f64(rng.uniform(lo, hi))).collect()
            }
            FillRule::FromValues(values) => {
                if values.len() != n {
                    return Err(Error::ShapeMismatch(format!(
                        "{} values for shape {shape}",
                        values.len()
                    )));
                }
                values.into_iter().map(T::from_f64).collect()
            }
        };
        Ok(Self { shape, data })
    }

    pub fn from_vec(dims: &[usize], data: Vec<T>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for shape {shape}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// Panics if the element count overflows `usize`.
    pub fn full(dims: &[usize], value: T) -> Self {
        let shape = Shape::new(dims).expect("tensor shape overflows usize");
        let n = shape.numel();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::full(dims, T::zero())
    }

    pub fn ones(dims: &[usize]) -> Self {
        Self::full(dims, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: Shape::scalar(),
            data: vec![value],
        }
    }

    pub fn uniform(dims: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Self {
        let shape = Shape::new(dims).expect("tensor shape overflows usize");
        let data = (0..shape.numel())
            .map(|_| T::from_f64(rng.uniform(lo, hi)))
            .collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn rank(&self) -> usize {
        self.shape.rank()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        match self.data.as_slice() {
            [v] => Ok(*v),
            _ => Err(Error::ShapeMismatch(format!(
                "item() on tensor of shape {}",
                self.shape
            ))),
        }
    }

    pub fn reshape(mut self, dims: &[usize]) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {} into {shape}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::NonFiniteValue(format!(
                "{what}: element {i} is {}",
                self.data[i]
            ))),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_same_shape(other, "zip_map")?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn expect_same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "{what}: {} vs {}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        elementwise(BinaryOp::Add, self, Operand::Tensor(other))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        elementwise(BinaryOp::Sub, self, Operand::Tensor(other))
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        elementwise(BinaryOp::Mul, self, Operand::Tensor(other))
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.expect_same_shape(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

pub fn elementwise<T: Element>(op: BinaryOp, a: &Tensor<T>, b: Operand<'_, T>) -> Result<Tensor<T>> {
    let f = |x: T, y: T| match op {
        BinaryOp::Add => x + y,
        BinaryOp::Sub => x - y,
        BinaryOp::Mul => x * y,
        BinaryOp::Max => x.max(y),
    };
    match b {
        Operand::Tensor(b) => a.zip_map(b, f),
        Operand::Scalar(s) => Ok(a.map(|x| f(x, s))),
    }
}

/// Reduce over one axis (`Some(axis)`) or over everything (`None`).
/// Argmax results are indices stored as floats; ties resolve to the lowest
/// index.
pub fn reduce<T: Element>(op: ReduceOp, t: &Tensor<T>, axis: Option<usize>) -> Result<Tensor<T>> {
    let Some(axis) = axis else {
        let v = match op {
            ReduceOp::Sum => t.sum(),
            ReduceOp::Mean => t.sum() / T::from_f64(t.numel() as f64),
            ReduceOp::Argmax => T::from_f64(argmax(t.data()) as f64),
        };
        return Ok(Tensor::scalar(v));
    };
    let dims = t.dims();
    if axis >= dims.len() {
        return Err(Error::InvalidAxis {
            axis,
            rank: dims.len(),
        });
    }
    let outer: usize = dims[..axis].iter().product();
    let len = dims[axis];
    let inner: usize = dims[axis + 1..].iter().product();
    let mut out_dims = dims.to_vec();
    out_dims.remove(axis);
    let mut out = Vec::with_capacity(outer * inner);
    let mut lane = Vec::with_capacity(len);
    for o in 0..outer {
        for i in 0..inner {
            lane.clear();
            lane.extend((0..len).map(|k| t.data[(o * len + k) * inner + i]));
            out.push(match op {
                ReduceOp::Sum => lane.iter().copied().sum(),
                ReduceOp::Mean => lane.iter().copied().sum::<T>() / T::from_f64(len as f64),
                ReduceOp::Argmax => T::from_f64(argmax(&lane) as f64),
            });
        }
    }
    Tensor::from_vec(&out_dims, out)
}

/// Index of the largest value; ties go to the lowest index. Empty input
/// returns 0.
pub fn argmax<T: Element>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn matmul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    matmul_t(a, false, b, false)
}

/// `op(a) · op(b)` where `op` optionally transposes a rank-2 tensor.
pub fn matmul_t<T: Element>(
    a: &Tensor<T>,
    transpose_a: bool,
    b: &Tensor<T>,
    transpose_b: bool,
) -> Result<Tensor<T>> {
    let (ad, bd) = (a.dims(), b.dims());
    if ad.len() != 2 || bd.len() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "matmul needs rank-2 operands, got {} and {}",
            a.shape, b.shape
        )));
    }
    fn view<T: Element>(t: &Tensor<T>, tr: bool) -> MatRef<'_, T> {
        let (r, c) = (t.dims()[0], t.dims()[1]);
        if tr {
            MatRef::transposed(t.data(), r, c)
        } else {
            MatRef::row_major(t.data(), r, c)
        }
    }
    let (va, vb) = (view(a, transpose_a), view(b, transpose_b));
    if va.cols != vb.rows {
        return Err(Error::ShapeMismatch(format!(
            "matmul inner dims {} vs {}",
            va.cols, vb.rows
        )));
    }
    let mut out = vec![T::zero(); va.rows * vb.cols];
    T::gemm(va, vb, &mut out, false);
    Tensor::from_vec(&[va.rows, vb.cols], out)
}

/// Resolved extents of one conv2d call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], kernels: &[usize], stride: usize, padding: usize) -> Result<Self> {
        let (&[n, c, h, w], &[co, ci, kh, kw]) = (input, kernels) else {
            return Err(Error::ShapeMismatch(format!(
                "conv2d expects [N,C,H,W] input and [Co,Ci,kh,kw] kernels, got {input:?} and {kernels:?}"
            )));
        };
        if c != ci {
            return Err(Error::ShapeMismatch(format!(
                "conv2d input has {c} channels, kernels expect {ci}"
            )));
        }
        if stride == 0 || kh == 0 || kw == 0 {
            return Err(Error::ShapeMismatch("conv2d stride and kernel must be positive".into()));
        }
        let extent = |size: usize, k: usize| -> Result<usize> {
            let padded = size + 2 * padding;
            if padded < k || (padded - k) % stride != 0 {
                return Err(Error::ShapeMismatch(format!(
                    "conv2d: extent {size} (padding {padding}) with kernel {k} and stride {stride} is not integral"
                )));
            }
            Ok((padded - k) / stride + 1)
        };
        Ok(Self {
            batch: n,
            in_channels: c,
            height: h,
            width: w,
            out_channels: co,
            kernel_h: kh,
            kernel_w: kw,
            stride,
            padding,
            out_h: extent(h, kh)?,
            out_w: extent(w, kw)?,
        })
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn output_dims(&self) -> [usize; 4] {
        [self.batch, self.out_channels, self.out_h, self.out_w]
    }

    /// Source pixel for output position `(oy, ox)` and kernel tap `(ki, kj)`,
    /// or `None` inside the zero padding.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ki: usize, kj: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + ki).checked_sub(self.padding)?;
        let x = (ox * self.stride + kj).checked_sub(self.padding)?;
        (y < self.height && x < self.width).then_some((y, x))
    }
}

/// Unfold the batch into a `[C·kh·kw, N·H'·W']` patch matrix.
fn im2col<T: Element>(g: &ConvGeometry, input: &[T]) -> Vec<T> {
    let cols = g.batch * g.out_plane();
    let mut out = vec![T::zero(); g.patch_len() * cols];
    let img_len = g.in_channels * g.height * g.width;
    for c in 0..g.in_channels {
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let dst = &mut out[row * cols..(row + 1) * cols];
                for img in 0..g.batch {
                    let plane = &input[img * img_len + c * g.height * g.width..];
                    for oy in 0..g.out_h {
                        for ox in 0..g.out_w {
                            if let Some((y, x)) = g.source(oy, ox, ki, kj) {
                                dst[(img * g.out_h + oy) * g.out_w + ox] = plane[y * g.width + x];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Inverse scatter of [`im2col`]: accumulate patch gradients into an input
/// shaped buffer.
fn col2im<T: Element>(g: &ConvGeometry, cols_data: &[T]) -> Vec<T> {
    let cols = g.batch * g.out_plane();
    let img_len = g.in_channels * g.height * g.width;
    let mut out = vec![T::zero(); g.batch * img_len];
    for c in 0..g.in_channels {
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let src = &cols_data[row * cols..(row + 1) * cols];
                for img in 0..g.batch {
                    let base = img * img_len + c * g.height * g.width;
                    for oy in 0..g.out_h {
                        for ox in 0..g.out_w {
                            if let Some((y, x)) = g.source(oy, ox, ki, kj) {
                                let v = src[(img * g.out_h + oy) * g.out_w + ox];
                                out[base + y * g.width + x] = out[base + y * g.width + x] + v;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(input.dims(), kernels.dims(), stride, padding)?;
    if bias.dims() != [g.out_channels] {
        return Err(Error::ShapeMismatch(format!(
            "conv2d bias shape {} for {} output channels",
            bias.shape, g.out_channels
        )));
    }
    let cols = im2col(&g, input.data());
    let ncols = g.batch * g.out_plane();
    let mut prod = vec![T::zero(); g.out_channels * ncols];
    T::gemm(
        MatRef::row_major(kernels.data(), g.out_channels, g.patch_len()),
        MatRef::row_major(&cols, g.patch_len(), ncols),
        &mut prod,
        false,
    );
    let plane = g.out_plane();
    let mut out = vec![T::zero(); prod.len()];
    for img in 0..g.batch {
        for o in 0..g.out_channels {
            let b = bias.data[o];
            let src = &prod[o * ncols + img * plane..][..plane];
            let dst = &mut out[(img * g.out_channels + o) * plane..][..plane];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = s + b;
            }
        }
    }
    Tensor::from_vec(&g.output_dims(), out)
}

/// Gradients of conv2d with respect to `(input, kernels, bias)`.
pub fn conv2d_backward<T: Element>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    upstream: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let g = ConvGeometry::new(input.dims(), kernels.dims(), stride, padding)?;
    if upstream.dims() != g.output_dims() {
        return Err(Error::ShapeMismatch(format!(
            "conv2d upstream gradient {} vs output {:?}",
            upstream.shape,
            g.output_dims()
        )));
    }
    let plane = g.out_plane();
    let ncols = g.batch * plane;
    // [N, Co, P] -> [Co, N·P]
    let mut dy = vec![T::zero(); g.out_channels * ncols];
    for img in 0..g.batch {
        for o in 0..g.out_channels {
            let src = &upstream.data[(img * g.out_channels + o) * plane..][..plane];
            dy[o * ncols + img * plane..][..plane].copy_from_slice(src);
        }
    }
    let dbias: Vec<T> = dy.chunks(ncols).map(|row| row.iter().copied().sum()).collect();

    let cols = im2col(&g, input.data());
    let mut dkernels = vec![T::zero(); g.out_channels * g.patch_len()];
    T::gemm(
        MatRef::row_major(&dy, g.out_channels, ncols),
        MatRef::transposed(&cols, g.patch_len(), ncols),
        &mut dkernels,
        false,
    );
    drop(cols);

    let mut dcols = vec![T::zero(); g.patch_len() * ncols];
    T::gemm(
        MatRef::transposed(kernels.data(), g.out_channels, g.patch_len()),
        MatRef::row_major(&dy, g.out_channels, ncols),
        &mut dcols,
        false,
    );
    let dinput = col2im(&g, &dcols);

    Ok((
        Tensor::from_vec(input.dims(), dinput)?,
        Tensor::from_vec(kernels.dims(), dkernels)?,
        Tensor::from_vec(&[g.out_channels], dbias)?,
    ))
}

/// Max pooling with floor-mode output extents `(H - window) / stride + 1`.
///
/// Returns the pooled tensor and, for every output element, the flat index
/// into `input` of the winning element. Ties go to the lowest flat index.
pub fn maxpool2d<T: Element>(
    input: &Tensor<T>,
    window: usize,
    stride: usize,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let &[n, c, h, w] = input.dims() else {
        return Err(Error::ShapeMismatch(format!(
            "maxpool2d expects [N,C,H,W], got {}",
            input.shape
        )));
    };
    if window == 0 || stride == 0 || window > h || window > w {
        return Err(Error::ShapeMismatch(format!(
            "maxpool2d window {window} stride {stride} on {h}x{w}"
        )));
    }
    let (oh, ow) = ((h - window) / stride + 1, (w - window) / stride + 1);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut idx = Vec::with_capacity(out.capacity());
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * stride * w + ox * stride;
                for ky in 0..window {
                    for kx in 0..window {
                        let i = base + (oy * stride + ky) * w + ox * stride + kx;
                        if input.data[i] > input.data[best] {
                            best = i;
                        }
                    }
                }
                out.push(input.data[best]);
                idx.push(best);
            }
        }
    }
    Ok((Tensor::from_vec(&[n, c, oh, ow], out)?, idx))
}

/// Route pooled gradients back to the stored argmax positions.
pub fn maxpool2d_backward<T: Element>(
    input_dims: &[usize],
    argmax: &[usize],
    upstream: &Tensor<T>,
) -> Result<Tensor<T>> {
    if argmax.len() != upstream.numel() {
        return Err(Error::ShapeMismatch(format!(
            "maxpool2d backward: {} indices for {} gradients",
            argmax.len(),
            upstream.numel()
        )));
    }
    let mut grad = Tensor::zeros(input_dims);
    for (&i, &g) in argmax.iter().zip(upstream.data()) {
        grad.data[i] = grad.data[i] + g;
    }
    Ok(grad)
}
