//! Bilinear sampling with clamp-to-edge, grid warping and deformable convolution.

use crate::diffengine::conv::{cols_grad, weight_grad};
use crate::error::{dim_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Number of taps of the fixed 3x3 deformable kernel.
pub const DEFORM_TAPS: usize = 9;

/// Four-point bilinear stencil at a continuous position.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Taps<T> {
    pub idx: [usize; 4],
    pub wts: [T; 4],
    pub dwdx: [T; 4],
    pub dwdy: [T; 4],
}

struct Axis<T> {
    lo: usize,
    hi: usize,
    frac: T,
    /// Derivative w.r.t. the coordinate flows only inside the clamped range.
    live: T,
}

#[inline]
fn axis<T: Scalar>(pos: T, len: usize) -> Axis<T> {
    let max = T::lit((len - 1) as f64);
    let live = if pos >= T::zero() && pos <= max { T::one() } else { T::zero() };
    let p = pos.max(T::zero()).min(max);
    let lo = p.floor().to_usize().unwrap_or(0).min(len - 1);
    let hi = (lo + 1).min(len - 1);
    Axis { lo, hi, frac: p - T::lit(lo as f64), live }
}

impl<T: Scalar> Taps<T> {
    #[inline]
    pub fn at(x: T, y: T, h: usize, w: usize) -> Self {
        let ax = axis(x, w);
        let ay = axis(y, h);
        let one = T::one();
        let (fx, fy) = (ax.frac, ay.frac);
        let idx = [ay.lo * w + ax.lo, ay.lo * w + ax.hi, ay.hi * w + ax.lo, ay.hi * w + ax.hi];
        let wts = [(one - fy) * (one - fx), (one - fy) * fx, fy * (one - fx), fy * fx];
        let dwdx = [-(one - fy) * ax.live, (one - fy) * ax.live, -fy * ax.live, fy * ax.live];
        let dwdy = [-(one - fx) * ay.live, -fx * ay.live, (one - fx) * ay.live, fx * ay.live];
        Self { idx, wts, dwdx, dwdy }
    }

    #[inline]
    pub fn sample(&self, plane: &[T]) -> T {
        plane[self.idx[0]] * self.wts[0]
            + plane[self.idx[1]] * self.wts[1]
            + plane[self.idx[2]] * self.wts[2]
            + plane[self.idx[3]] * self.wts[3]
    }

    /// `(d sample / dx, d sample / dy)`.
    #[inline]
    pub fn position_grad(&self, plane: &[T]) -> (T, T) {
        let mut gx = T::zero();
        let mut gy = T::zero();
        for j in 0..4 {
            let v = plane[self.idx[j]];
            gx += self.dwdx[j] * v;
            gy += self.dwdy[j] * v;
        }
        (gx, gy)
    }

    #[inline]
    pub fn scatter(&self, plane: &mut [T], g: T) {
        for j in 0..4 {
            plane[self.idx[j]] += g * self.wts[j];
        }
    }
}

/// Bilinear value of `plane` at `(x, y)` with clamp-to-edge.
pub fn bilinear_at<T: Scalar>(plane: &[T], h: usize, w: usize, x: T, y: T) -> T {
    Taps::at(x, y, h, w).sample(plane)
}

fn check_offsets(offsets: &[usize], n: usize, h: usize, w: usize, op: &str) -> Result<()> {
    match offsets {
        [c, oh, ow] | [1, c, oh, ow] if *c == n && *oh == h && *ow == w => Ok(()),
        other => dim_err(format!("{op} expects offsets of shape [{n}, {h}, {w}], got {other:?}")),
    }
}

pub(crate) fn grid_sample_forward<T: Scalar>(input: &Tensor<T>, offsets: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = input.dims3()?;
    check_offsets(offsets.shape(), 2, h, w, "grid_sample")?;
    let (dx, dy) = (offsets.channel(0), offsets.channel(1));
    let n = h * w;
    let mut out = vec![T::zero(); c * n];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let taps = Taps::at(T::lit(x as f64) + dx[p], T::lit(y as f64) + dy[p], h, w);
            for ci in 0..c {
                out[ci * n + p] = taps.sample(input.channel(ci));
            }
        }
    }
    Tensor::new(vec![c, h, w], out)
}

pub(crate) fn grid_sample_backward<T: Scalar>(
    grad: &Tensor<T>,
    input: &Tensor<T>,
    offsets: &Tensor<T>,
) -> Result<(Vec<T>, Vec<T>)> {
    let (c, h, w) = input.dims3()?;
    let n = h * w;
    let (dx, dy) = (offsets.channel(0), offsets.channel(1));
    let mut dinput = vec![T::zero(); c * n];
    let mut doff = vec![T::zero(); 2 * n];
    let gd = grad.data();
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let taps = Taps::at(T::lit(x as f64) + dx[p], T::lit(y as f64) + dy[p], h, w);
            let (mut gx, mut gy) = (T::zero(), T::zero());
            for ci in 0..c {
                let g = gd[ci * n + p];
                let (px, py) = taps.position_grad(input.channel(ci));
                gx += g * px;
                gy += g * py;
                taps.scatter(&mut dinput[ci * n..(ci + 1) * n], g);
            }
            doff[p] = gx;
            doff[n + p] = gy;
        }
    }
    Ok((dinput, doff))
}

fn deform_geometry<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, offsets: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (c, h, w) = input.dims3()?;
    match weight.shape() {
        [co, ci, 3, 3] if *ci == c && *co == c => {}
        other => return dim_err(format!("deform_conv2d weight must be [{c}, {c}, 3, 3], got {other:?}")),
    }
    check_offsets(offsets.shape(), 2 * DEFORM_TAPS, h, w, "deform_conv2d")?;
    Ok((c, h, w))
}

/// Sampled column matrix: row `ci * 9 + t`, column `p`.
fn deform_columns<T: Scalar>(input: &Tensor<T>, offsets: &Tensor<T>, c: usize, h: usize, w: usize) -> Vec<T> {
    let n = h * w;
    let mut cols = vec![T::zero(); c * DEFORM_TAPS * n];
    for t in 0..DEFORM_TAPS {
        let (kx, ky) = ((t % 3) as f64 - 1.0, (t / 3) as f64 - 1.0);
        let (ox, oy) = (offsets.channel(2 * t), offsets.channel(2 * t + 1));
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let taps = Taps::at(T::lit(x as f64 + kx) + ox[p], T::lit(y as f64 + ky) + oy[p], h, w);
                for ci in 0..c {
                    cols[(ci * DEFORM_TAPS + t) * n + p] = taps.sample(input.channel(ci));
                }
            }
        }
    }
    cols
}

pub(crate) fn deform_conv_forward<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, offsets: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = deform_geometry(input, weight, offsets)?;
    let cols = deform_columns(input, offsets, c, h, w);
    let n = h * w;
    // tap by tap, in the same accumulation order as the dense convolution
    let mut out = vec![T::zero(); c * n];
    for t in 0..DEFORM_TAPS {
        T::gemm(
            c,
            c,
            n,
            T::one(),
            &weight.data()[t..],
            ((c * DEFORM_TAPS) as isize, DEFORM_TAPS as isize),
            &cols[t * n..],
            ((DEFORM_TAPS * n) as isize, 1),
            T::one(),
            &mut out,
            (n as isize, 1),
        );
    }
    Tensor::new(vec![c, h, w], out)
}

pub(crate) struct DeformGrads<T> {
    pub input: Vec<T>,
    pub weight: Vec<T>,
    pub offsets: Vec<T>,
}

pub(crate) fn deform_conv_backward<T: Scalar>(
    grad: &Tensor<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    offsets: &Tensor<T>,
) -> Result<DeformGrads<T>> {
    let (c, h, w) = deform_geometry(input, weight, offsets)?;
    let n = h * w;
    let rows = c * DEFORM_TAPS;
    let cols = deform_columns(input, offsets, c, h, w);
    let dweight = weight_grad(grad.data(), &cols, c, rows, n);
    drop(cols);
    let dcols = cols_grad(grad.data(), weight.data(), c, rows, n);
    let mut dinput = vec![T::zero(); c * n];
    let mut doff = vec![T::zero(); 2 * DEFORM_TAPS * n];
    for t in 0..DEFORM_TAPS {
        let (kx, ky) = ((t % 3) as f64 - 1.0, (t / 3) as f64 - 1.0);
        let (ox, oy) = (offsets.channel(2 * t), offsets.channel(2 * t + 1));
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let taps = Taps::at(T::lit(x as f64 + kx) + ox[p], T::lit(y as f64 + ky) + oy[p], h, w);
                let (mut gx, mut gy) = (T::zero(), T::zero());
                for ci in 0..c {
                    let g = dcols[(ci * DEFORM_TAPS + t) * n + p];
                    let (px, py) = taps.position_grad(input.channel(ci));
                    gx += g * px;
                    gy += g * py;
                    taps.scatter(&mut dinput[ci * n..(ci + 1) * n], g);
                }
                doff[2 * t * n + p] = gx;
                doff[(2 * t + 1) * n + p] = gy;
            }
        }
    }
    Ok(DeformGrads { input: dinput, weight: dweight, offsets: doff })
}
