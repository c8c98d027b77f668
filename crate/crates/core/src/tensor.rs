//! Dense row-major tensors.

use std::fmt;

use crate::error::{contract_err, dim_err, Result};
use crate::scalar::Scalar;

/// Dense n-dimensional array stored contiguously in row-major order.
///
/// Image-like tensors use the `channels x height x width` layout; a leading
/// batch extent of 1 is accepted by [`Tensor::squeeze_batch`].
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if shape.len() > 4 {
            return dim_err(format!("tensor order {} exceeds 4", shape.len()));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return dim_err(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self { shape, data: vec![value; n] }
    }

    pub fn scalar(value: T) -> Self {
        Self { shape: vec![], data: vec![value] }
    }

    /// Builds a `c x h x w` tensor from a function of `(c, y, x)`.
    pub fn from_fn3(c: usize, h: usize, w: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(c * h * w);
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    data.push(f(ci, y, x));
                }
            }
        }
        Self { shape: vec![c, h, w], data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of elements of a scalar-valued tensor is 1 regardless of order.
    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// `(channels, height, width)` of an order-3 tensor (or order-4 with batch 1).
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape.as_slice() {
            [c, h, w] => Ok((*c, *h, *w)),
            [1, c, h, w] => Ok((*c, *h, *w)),
            other => dim_err(format!("expected a C x H x W tensor, got shape {other:?}")),
        }
    }

    /// Drops a leading batch extent of 1.
    pub fn squeeze_batch(mut self) -> Result<Self> {
        match self.shape.as_slice() {
            [1, _, _, _] => {
                self.shape.remove(0);
                Ok(self)
            }
            [_, _, _] => Ok(self),
            other => dim_err(format!("cannot squeeze batch from shape {other:?}")),
        }
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.data.len() {
            return dim_err(format!("cannot reshape {:?} into {shape:?}", self.shape));
        }
        self.shape = shape;
        Ok(self)
    }

    #[inline]
    pub fn at3(&self, c: usize, y: usize, x: usize) -> T {
        let (h, w) = (self.shape[self.shape.len() - 2], self.shape[self.shape.len() - 1]);
        self.data[(c * h + y) * w + x]
    }

    /// Contiguous slice of one channel of an image tensor.
    pub fn channel(&self, c: usize) -> &[T] {
        let plane = self.plane_len();
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let plane = self.plane_len();
        &mut self.data[c * plane..(c + 1) * plane]
    }

    fn plane_len(&self) -> usize {
        let n = self.shape.len();
        if n < 2 {
            return self.data.len();
        }
        self.shape[n - 2] * self.shape[n - 1]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_same_shape(other)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.expect_same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, factor: T) -> Self {
        self.map(|v| v * factor)
    }

    pub fn expect_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return dim_err(format!("shape mismatch: {:?} vs {:?}", self.shape, other.shape));
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        if self.data.is_empty() {
            return T::zero();
        }
        self.sum() / T::lit(self.data.len() as f64)
    }

    pub fn min(&self) -> T {
        self.data.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max(&self) -> T {
        self.data.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.expect_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max))
    }

    /// Converts to another scalar width.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    /// Channel slice `[start, start + count)` of an image tensor.
    pub fn narrow_channels(&self, start: usize, count: usize) -> Result<Self> {
        let (c, h, w) = self.dims3()?;
        if start + count > c {
            return dim_err(format!("channel range {start}..{} exceeds {c}", start + count));
        }
        let plane = h * w;
        Ok(Self {
            shape: vec![count, h, w],
            data: self.data[start * plane..(start + count) * plane].to_vec(),
        })
    }

    /// Mean over channels, producing a `1 x h x w` tensor.
    pub fn channel_mean(&self) -> Result<Self> {
        let (c, h, w) = self.dims3()?;
        let mut out = vec![T::zero(); h * w];
        for ci in 0..c {
            for (o, &v) in out.iter_mut().zip(self.channel(ci)) {
                *o += v;
            }
        }
        let inv = T::one() / T::lit(c as f64);
        out.iter_mut().for_each(|v| *v *= inv);
        Self::new(vec![1, h, w], out)
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        write!(f, "Tensor{:?}[", self.shape)?;
        for (i, v) in self.data.iter().take(PREVIEW).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        if self.data.len() > PREVIEW {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}

/// Bilinear resize with half-pixel centers: a destination pixel `x` samples
/// source coordinate `(x + 0.5) * w / out_w - 0.5`, clamped to `[0, w - 1]`.
pub fn bilinear_resize<T: Scalar>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (c, h, w) = input.dims3()?;
    if out_h == 0 || out_w == 0 {
        return dim_err("resize target must be non-empty");
    }
    let plan = ResizePlan::new(h, w, out_h, out_w);
    let mut out = vec![T::zero(); c * out_h * out_w];
    for ci in 0..c {
        let src = input.channel(ci);
        let dst = &mut out[ci * out_h * out_w..(ci + 1) * out_h * out_w];
        for (oy, ay) in plan.rows.iter().enumerate() {
            for (ox, ax) in plan.cols.iter().enumerate() {
                dst[oy * out_w + ox] = ay.interpolate(ax, src, w);
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

/// Per-axis interpolation taps shared by the resize forward and backward passes.
#[derive(Clone, Debug)]
pub(crate) struct AxisTap<T> {
    pub lo: usize,
    pub hi: usize,
    pub frac: T,
}

impl<T: Scalar> AxisTap<T> {
    fn new(dst: usize, src_len: usize, dst_len: usize) -> Self {
        let ratio = T::lit(src_len as f64) / T::lit(dst_len as f64);
        let half = T::lit(0.5);
        let max = T::lit((src_len - 1) as f64);
        let pos = ((T::lit(dst as f64) + half) * ratio - half).max(T::zero()).min(max);
        let lo = pos.floor().to_usize().unwrap_or(0).min(src_len - 1);
        let hi = (lo + 1).min(src_len - 1);
        Self { lo, hi, frac: pos - T::lit(lo as f64) }
    }

    #[inline]
    fn interpolate(&self, col: &AxisTap<T>, src: &[T], w: usize) -> T {
        let one = T::one();
        let top = src[self.lo * w + col.lo] * (one - col.frac) + src[self.lo * w + col.hi] * col.frac;
        let bottom = src[self.hi * w + col.lo] * (one - col.frac) + src[self.hi * w + col.hi] * col.frac;
        top * (one - self.frac) + bottom * self.frac
    }
}

pub(crate) struct ResizePlan<T> {
    pub rows: Vec<AxisTap<T>>,
    pub cols: Vec<AxisTap<T>>,
}

impl<T: Scalar> ResizePlan<T> {
    pub fn new(h: usize, w: usize, out_h: usize, out_w: usize) -> Self {
        Self {
            rows: (0..out_h).map(|y| AxisTap::new(y, h, out_h)).collect(),
            cols: (0..out_w).map(|x| AxisTap::new(x, w, out_w)).collect(),
        }
    }
}

/// Non-overlapping `factor x factor` block means.
pub fn avg_pool<T: Scalar>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let (c, h, w) = input.dims3()?;
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return dim_err(format!("extents {h}x{w} are not divisible by pooling factor {factor}"));
    }
    let (oh, ow) = (h / factor, w / factor);
    let inv = T::one() / T::lit((factor * factor) as f64);
    let mut out = vec![T::zero(); c * oh * ow];
    for ci in 0..c {
        let src = input.channel(ci);
        let dst = &mut out[ci * oh * ow..(ci + 1) * oh * ow];
        for y in 0..h {
            let row = &src[y * w..(y + 1) * w];
            let drow = &mut dst[(y / factor) * ow..(y / factor + 1) * ow];
            for (x, &v) in row.iter().enumerate() {
                drow[x / factor] += v;
            }
        }
        dst.iter_mut().for_each(|v| *v *= inv);
    }
    Tensor::new(vec![c, oh, ow], out)
}

/// Nearest-neighbour replication of every pixel into a `factor x factor` block.
pub fn nearest_broadcast<T: Scalar>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let (c, h, w) = input.dims3()?;
    if factor == 0 {
        return contract_err("broadcast factor must be positive");
    }
    Ok(Tensor::from_fn3(c, h * factor, w * factor, |ci, y, x| input.at3(ci, y / factor, x / factor)))
}

/// 3x3 Sobel responses `(gx, gy)` of a single plane with edge replication.
pub fn sobel<T: Scalar>(plane: &[T], h: usize, w: usize) -> (Vec<T>, Vec<T>) {
    let two = T::lit(2.0);
    let at = |y: isize, x: isize| {
        let yy = y.clamp(0, h as isize - 1) as usize;
        let xx = x.clamp(0, w as isize - 1) as usize;
        plane[yy * w + xx]
    };
    let mut gx = vec![T::zero(); h * w];
    let mut gy = vec![T::zero(); h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            gx[i] = (at(y - 1, x + 1) + two * at(y, x + 1) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + two * at(y, x - 1) + at(y + 1, x - 1));
            gy[i] = (at(y + 1, x - 1) + two * at(y + 1, x) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + two * at(y - 1, x) + at(y - 1, x + 1));
        }
    }
    (gx, gy)
}

/// Center crop of an image tensor.
pub fn center_crop<T: Scalar>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (c, h, w) = input.dims3()?;
    if out_h > h || out_w > w {
        return dim_err(format!("crop {out_h}x{out_w} larger than {h}x{w}"));
    }
    let (oy, ox) = ((h - out_h) / 2, (w - out_w) / 2);
    Ok(Tensor::from_fn3(c, out_h, out_w, |ci, y, x| input.at3(ci, y + oy, x + ox)))
}
