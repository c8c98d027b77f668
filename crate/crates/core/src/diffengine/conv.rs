//! Convolution kernels (im2col + GEMM) with edge-replicated padding.

use crate::error::{dim_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], weight: &[usize], stride: usize, pad: usize) -> Result<(Self, usize)> {
        let [c_in, h, w] = match input {
            [c, h, w] | [1, c, h, w] => [*c, *h, *w],
            other => return dim_err(format!("conv2d input must be C x H x W, got {other:?}")),
        };
        let [c_out, wc_in, kh, kw] = match weight {
            [a, b, c, d] => [*a, *b, *c, *d],
            other => return dim_err(format!("conv2d weight must be Cout x Cin x k x k, got {other:?}")),
        };
        if wc_in != c_in {
            return dim_err(format!("conv2d input has {c_in} channels, weight expects {wc_in}"));
        }
        if kh != kw || kh % 2 == 0 {
            return dim_err(format!("conv2d kernel must be square and odd, got {kh}x{kw}"));
        }
        if stride == 0 {
            return dim_err("conv2d stride must be positive");
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return dim_err(format!("conv2d input {h}x{w} smaller than kernel {kh}"));
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        Ok((Self { c_in, h, w, k: kh, stride, pad, ho, wo }, c_out))
    }

    pub fn rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    pub fn cols(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    #[inline]
    fn src_index(&self, o: usize, tap: usize, len: usize) -> usize {
        let pos = (o * self.stride + tap) as isize - self.pad as isize;
        pos.clamp(0, len as isize - 1) as usize
    }
}

pub(crate) fn im2col<T: Scalar>(input: &[T], g: &ConvGeom) -> Vec<T> {
    let n = g.cols();
    let mut cols = vec![T::zero(); g.rows() * n];
    let xs: Vec<Vec<usize>> = (0..g.k).map(|kx| (0..g.wo).map(|ox| g.src_index(ox, kx, g.w)).collect()).collect();
    for ci in 0..g.c_in {
        let plane = &input[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for (kx, xmap) in xs.iter().enumerate() {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..g.ho {
                    let src = &plane[g.src_index(oy, ky, g.h) * g.w..];
                    let drow = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    for (d, &ix) in drow.iter_mut().zip(xmap) {
                        *d = src[ix];
                    }
                }
            }
        }
    }
    cols
}

pub(crate) fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom) -> Vec<T> {
    let n = g.cols();
    let mut out = vec![T::zero(); g.c_in * g.h * g.w];
    let xs: Vec<Vec<usize>> = (0..g.k).map(|kx| (0..g.wo).map(|ox| g.src_index(ox, kx, g.w)).collect()).collect();
    for ci in 0..g.c_in {
        let plane = &mut out[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for (kx, xmap) in xs.iter().enumerate() {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..g.ho {
                    let base = g.src_index(oy, ky, g.h) * g.w;
                    for (&v, &ix) in src[oy * g.wo..(oy + 1) * g.wo].iter().zip(xmap) {
                        plane[base + ix] += v;
                    }
                }
            }
        }
    }
    out
}

/// `weight (c_out x rows) * cols (rows x n) + bias`.
pub(crate) fn matmul_bias<T: Scalar>(weight: &[T], cols: &[T], bias: Option<&[T]>, c_out: usize, rows: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); c_out * n];
    if let Some(b) = bias {
        for (co, &bv) in b.iter().enumerate() {
            out[co * n..(co + 1) * n].iter_mut().for_each(|v| *v = bv);
        }
    }
    let beta = if bias.is_some() { T::one() } else { T::zero() };
    T::gemm(c_out, rows, n, T::one(), weight, (rows as isize, 1), cols, (n as isize, 1), beta, &mut out, (n as isize, 1));
    out
}

/// Gradient w.r.t. the weight matrix: `grad (c_out x n) * cols^T`.
pub(crate) fn weight_grad<T: Scalar>(grad: &[T], cols: &[T], c_out: usize, rows: usize, n: usize) -> Vec<T> {
    let mut dw = vec![T::zero(); c_out * rows];
    T::gemm(c_out, n, rows, T::one(), grad, (n as isize, 1), cols, (1, n as isize), T::zero(), &mut dw, (rows as isize, 1));
    dw
}

/// Gradient w.r.t. the column matrix: `weight^T * grad`.
pub(crate) fn cols_grad<T: Scalar>(grad: &[T], weight: &[T], c_out: usize, rows: usize, n: usize) -> Vec<T> {
    let mut dc = vec![T::zero(); rows * n];
    T::gemm(rows, c_out, n, T::one(), weight, (1, rows as isize), grad, (n as isize, 1), T::zero(), &mut dc, (n as isize, 1));
    dc
}

/// Layout for convolving straight from an edge-padded copy of the input at
/// stride 1: each tap is one GEMM over an output grid `ho x we` whose rows
/// are as wide as the padded rows. Columns `wo..we` are scratch.
struct Padded {
    wp: usize,
    we: usize,
    plane: usize,
}

impl Padded {
    fn new(g: &ConvGeom) -> Option<Self> {
        if g.stride != 1 {
            return None;
        }
        let wp = g.w + 2 * g.pad;
        let last = g.ho * wp - 1 + (g.k - 1) * wp + g.k - 1;
        Some(Self { wp, we: wp, plane: ((g.h + 2 * g.pad) * wp).max(last + 1) })
    }

    fn cols(&self, g: &ConvGeom) -> usize {
        g.ho * self.we
    }

    fn pad<T: Scalar>(&self, input: &[T], g: &ConvGeom) -> Vec<T> {
        let mut out = vec![T::zero(); g.c_in * self.plane];
        for ci in 0..g.c_in {
            let src = &input[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            let dst = &mut out[ci * self.plane..];
            for py in 0..g.h + 2 * g.pad {
                let row = &src[g.src_index(0, py, g.h) * g.w..][..g.w];
                let d = &mut dst[py * self.wp..(py + 1) * self.wp];
                d[..g.pad].fill(row[0]);
                d[g.pad..g.pad + g.w].copy_from_slice(row);
                d[g.pad + g.w..].fill(row[g.w - 1]);
            }
        }
        out
    }

    /// Adjoint of [`Padded::pad`].
    fn fold<T: Scalar>(&self, padded: &[T], g: &ConvGeom) -> Vec<T> {
        let mut out = vec![T::zero(); g.c_in * g.h * g.w];
        for ci in 0..g.c_in {
            let src = &padded[ci * self.plane..];
            let dst = &mut out[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for py in 0..g.h + 2 * g.pad {
                let row = &mut dst[g.src_index(0, py, g.h) * g.w..][..g.w];
                let s = &src[py * self.wp..(py + 1) * self.wp];
                row[0] += s[..g.pad].iter().copied().sum::<T>();
                for (d, &v) in row.iter_mut().zip(&s[g.pad..g.pad + g.w]) {
                    *d += v;
                }
                row[g.w - 1] += s[g.pad + g.w..].iter().copied().sum::<T>();
            }
        }
        out
    }

    fn crop<T: Scalar>(&self, ext: &[T], rows: usize, g: &ConvGeom) -> Vec<T> {
        let mut out = Vec::with_capacity(rows * g.ho * g.wo);
        for line in ext.chunks_exact(self.we) {
            out.extend_from_slice(&line[..g.wo]);
        }
        out
    }

    fn extend<T: Scalar>(&self, grad: &[T], g: &ConvGeom) -> Vec<T> {
        let mut out = vec![T::zero(); grad.len() / g.wo * self.we];
        for (line, src) in out.chunks_exact_mut(self.we).zip(grad.chunks_exact(g.wo)) {
            line[..g.wo].copy_from_slice(src);
        }
        out
    }
}

fn direct_forward<T: Scalar>(input: &[T], weight: &[T], bias: Option<&[T]>, g: &ConvGeom, pl: &Padded, c_out: usize) -> Vec<T> {
    let padded = pl.pad(input, g);
    let n = pl.cols(g);
    let kk = g.k * g.k;
    let mut ext = vec![T::zero(); c_out * n];
    if let Some(b) = bias {
        for (co, &bv) in b.iter().enumerate() {
            ext[co * n..(co + 1) * n].fill(bv);
        }
    }
    for ky in 0..g.k {
        for kx in 0..g.k {
            let off = ky * pl.wp + kx;
            T::gemm(
                c_out,
                g.c_in,
                n,
                T::one(),
                &weight[ky * g.k + kx..],
                ((g.c_in * kk) as isize, kk as isize),
                &padded[off..],
                (pl.plane as isize, 1),
                T::one(),
                &mut ext,
                (n as isize, 1),
            );
        }
    }
    pl.crop(&ext, c_out, g)
}

fn direct_backward<T: Scalar>(grad: &[T], input: &[T], weight: &[T], g: &ConvGeom, pl: &Padded, c_out: usize, need_input: bool) -> (Vec<T>, Option<Vec<T>>) {
    let padded = pl.pad(input, g);
    let gext = pl.extend(grad, g);
    let n = pl.cols(g);
    let kk = g.k * g.k;
    let mut dw = vec![T::zero(); c_out * g.c_in * kk];
    let mut dpad = need_input.then(|| vec![T::zero(); padded.len()]);
    for ky in 0..g.k {
        for kx in 0..g.k {
            let off = ky * pl.wp + kx;
            let tap = ky * g.k + kx;
            T::gemm(
                c_out,
                n,
                g.c_in,
                T::one(),
                &gext,
                (n as isize, 1),
                &padded[off..],
                (1, pl.plane as isize),
                T::zero(),
                &mut dw[tap..],
                ((g.c_in * kk) as isize, kk as isize),
            );
            if let Some(dp) = dpad.as_mut() {
                T::gemm(
                    g.c_in,
                    c_out,
                    n,
                    T::one(),
                    &weight[tap..],
                    (kk as isize, (g.c_in * kk) as isize),
                    &gext,
                    (n as isize, 1),
                    T::one(),
                    &mut dp[off..],
                    (pl.plane as isize, 1),
                );
            }
        }
    }
    (dw, dpad.map(|dp| pl.fold(&dp, g)))
}

pub(crate) fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (g, c_out) = ConvGeom::new(input.shape(), weight.shape(), stride, pad)?;
    if let Some(b) = bias {
        if b.len() != c_out {
            return dim_err(format!("conv2d bias has {} entries, expected {c_out}", b.len()));
        }
    }
    let out = if g.is_pointwise() {
        matmul_bias(weight.data(), input.data(), bias.map(|b| b.data()), c_out, g.rows(), g.cols())
    } else if let Some(pl) = Padded::new(&g) {
        direct_forward(input.data(), weight.data(), bias.map(|b| b.data()), &g, &pl, c_out)
    } else {
        let cols = im2col(input.data(), &g);
        matmul_bias(weight.data(), &cols, bias.map(|b| b.data()), c_out, g.rows(), g.cols())
    };
    Tensor::new(vec![c_out, g.ho, g.wo], out)
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

pub(crate) fn conv2d_backward<T: Scalar>(
    grad: &Tensor<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    pad: usize,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let (g, c_out) = ConvGeom::new(input.shape(), weight.shape(), stride, pad)?;
    let (rows, n) = (g.rows(), g.cols());
    let gd = grad.data();
    let db = (0..c_out).map(|co| gd[co * n..(co + 1) * n].iter().copied().sum()).collect();
    if !g.is_pointwise() {
        if let Some(pl) = Padded::new(&g) {
            let (dw, di) = direct_backward(gd, input.data(), weight.data(), &g, &pl, c_out, need_input);
            return Ok(ConvGrads { input: di, weight: dw, bias: db });
        }
    }
    let owned;
    let cols: &[T] = if g.is_pointwise() {
        input.data()
    } else {
        owned = im2col(input.data(), &g);
        &owned
    };
    let dw = weight_grad(gd, cols, c_out, rows, n);
    let dinput = need_input.then(|| {
        let dcols = cols_grad(gd, weight.data(), c_out, rows, n);
        if g.is_pointwise() {
            dcols
        } else {
            col2im(&dcols, &g)
        }
    });
    Ok(ConvGrads { input: dinput, weight: dw, bias: db })
}
