//! Correlation-weighted neighbourhood filter kernels.
//!
//! Every pixel `i` averages the source features over its own `s x s`
//! neighbourhood (clamped to the image). The averaging weights are a softmax
//! of the dot products between each neighbour's source feature and the
//! reference feature at `i`.

use crate::error::{contract_err, dim_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-pixel kernel side lengths (odd), row-major over the image plane.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KernelMap {
    pub height: usize,
    pub width: usize,
    sides: Vec<u16>,
}

impl KernelMap {
    pub fn new(height: usize, width: usize, sides: Vec<u16>) -> Result<Self> {
        if sides.len() != height * width {
            return dim_err(format!("kernel map has {} entries for a {height}x{width} plane", sides.len()));
        }
        if let Some(s) = sides.iter().find(|s| *s % 2 == 0) {
            return contract_err(format!("kernel side {s} is not odd"));
        }
        Ok(Self { height, width, sides })
    }

    pub fn uniform(height: usize, width: usize, side: u16) -> Result<Self> {
        Self::new(height, width, vec![side; height * width])
    }

    pub fn sides(&self) -> &[u16] {
        &self.sides
    }

    /// Fraction of pixels whose kernel side equals `side`.
    pub fn fraction_with(&self, side: u16) -> f64 {
        if self.sides.is_empty() {
            return 0.0;
        }
        self.sides.iter().filter(|&&s| s == side).count() as f64 / self.sides.len() as f64
    }
}

/// `out[y][x] = plane[clamp(y + dy)][clamp(x + dx)]`.
fn shift_plane<T: Scalar>(plane: &[T], h: usize, w: usize, dy: isize, dx: isize, out: &mut [T]) {
    let (lo, hi) = interior(w, dx);
    for y in 0..h {
        let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
        let row = &plane[yy * w..(yy + 1) * w];
        let dst = &mut out[y * w..(y + 1) * w];
        dst[..lo].fill(row[0]);
        dst[hi..].fill(row[w - 1]);
        if lo < hi {
            let s0 = (lo as isize + dx) as usize;
            dst[lo..hi].copy_from_slice(&row[s0..s0 + hi - lo]);
        }
    }
}

/// Adjoint of [`shift_plane`]: accumulates `grad` into the sampled positions.
fn unshift_add<T: Scalar>(grad: &[T], h: usize, w: usize, dy: isize, dx: isize, plane: &mut [T]) {
    let (lo, hi) = interior(w, dx);
    for y in 0..h {
        let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
        let src = &grad[y * w..(y + 1) * w];
        let row = &mut plane[yy * w..(yy + 1) * w];
        row[0] += src[..lo].iter().copied().sum::<T>();
        row[w - 1] += src[hi..].iter().copied().sum::<T>();
        if lo < hi {
            let s0 = (lo as isize + dx) as usize;
            for (d, &v) in row[s0..s0 + hi - lo].iter_mut().zip(&src[lo..hi]) {
                *d += v;
            }
        }
    }
}

/// Output columns whose shifted column stays inside `[0, w)`.
fn interior(w: usize, dx: isize) -> (usize, usize) {
    let lo = (-dx).clamp(0, w as isize) as usize;
    let hi = (w as isize - dx).clamp(lo as isize, w as isize) as usize;
    (lo, hi)
}

/// Neighbour offsets of the largest kernel, row-major.
fn offsets(sizes: &KernelMap) -> Vec<(isize, isize)> {
    let r = sizes.sides.iter().copied().max().unwrap_or(1) as isize / 2;
    (-r..=r).flat_map(|dy| (-r..=r).map(move |dx| (dy, dx))).collect()
}

/// Softmax weights `[offset][pixel]`; offsets outside a pixel's own kernel
/// get zero weight.
fn softmax_weights<T: Scalar>(src: &[T], refr: &[T], sizes: &KernelMap, c: usize, offs: &[(isize, isize)]) -> Vec<T> {
    let (h, w) = (sizes.height, sizes.width);
    let n = h * w;
    let mut logits = vec![T::zero(); offs.len() * n];
    let mut shifted = vec![T::zero(); n];
    for (d, &(dy, dx)) in offs.iter().enumerate() {
        let ld = &mut logits[d * n..(d + 1) * n];
        for ci in 0..c {
            shift_plane(&src[ci * n..(ci + 1) * n], h, w, dy, dx, &mut shifted);
            for ((l, &s), &r) in ld.iter_mut().zip(&shifted).zip(&refr[ci * n..(ci + 1) * n]) {
                *l += s * r;
            }
        }
        let reach = dy.unsigned_abs().max(dx.unsigned_abs()) * 2 + 1;
        for (l, &side) in ld.iter_mut().zip(&sizes.sides) {
            if reach > side as usize {
                *l = T::neg_infinity();
            }
        }
    }
    let mut max = vec![T::neg_infinity(); n];
    for ld in logits.chunks_exact(n) {
        for (m, &l) in max.iter_mut().zip(ld) {
            *m = m.max(l);
        }
    }
    let mut z = vec![T::zero(); n];
    for ld in logits.chunks_exact_mut(n) {
        for ((l, &m), zi) in ld.iter_mut().zip(&max).zip(z.iter_mut()) {
            *l = (*l - m).exp();
            *zi += *l;
        }
    }
    for ld in logits.chunks_exact_mut(n) {
        for (l, &zi) in ld.iter_mut().zip(&z) {
            *l /= zi;
        }
    }
    logits
}

fn check<T: Scalar>(source: &Tensor<T>, reference: &Tensor<T>, sizes: &KernelMap) -> Result<(usize, usize, usize)> {
    let (c, h, w) = source.dims3()?;
    if reference.dims3()? != (c, h, w) {
        return dim_err(format!(
            "reference filter operands differ: {:?} vs {:?}",
            source.shape(),
            reference.shape()
        ));
    }
    if (sizes.height, sizes.width) != (h, w) {
        return dim_err(format!("kernel map is {}x{}, features are {h}x{w}", sizes.height, sizes.width));
    }
    Ok((c, h, w))
}

pub(crate) fn reference_filter_forward<T: Scalar>(
    source: &Tensor<T>,
    reference: &Tensor<T>,
    sizes: &KernelMap,
) -> Result<(Tensor<T>, Vec<T>)> {
    let (c, h, w) = check(source, reference, sizes)?;
    let n = h * w;
    let src = source.data();
    let offs = offsets(sizes);
    let wts = softmax_weights(src, reference.data(), sizes, c, &offs);
    let mut out = vec![T::zero(); c * n];
    let mut shifted = vec![T::zero(); n];
    for (d, &(dy, dx)) in offs.iter().enumerate() {
        let wd = &wts[d * n..(d + 1) * n];
        for ci in 0..c {
            shift_plane(&src[ci * n..(ci + 1) * n], h, w, dy, dx, &mut shifted);
            for ((o, &s), &wt) in out[ci * n..(ci + 1) * n].iter_mut().zip(&shifted).zip(wd) {
                *o += wt * s;
            }
        }
    }
    Ok((Tensor::new(vec![c, h, w], out)?, wts))
}

pub(crate) fn reference_filter_backward<T: Scalar>(
    grad: &Tensor<T>,
    source: &Tensor<T>,
    reference: &Tensor<T>,
    sizes: &KernelMap,
    wts: &[T],
) -> Result<(Vec<T>, Vec<T>)> {
    let (c, h, w) = check(source, reference, sizes)?;
    let n = h * w;
    let (src, refr, gd) = (source.data(), reference.data(), grad.data());
    let offs = offsets(sizes);
    if wts.len() != offs.len() * n {
        return dim_err("cached filter weights do not match the kernel map");
    }
    let mut shifted = vec![T::zero(); n];

    // aux[d][i] = <g_i, F_src(l_d(i))>, then turned into the logit gradient
    let mut dlogit = vec![T::zero(); offs.len() * n];
    for (d, &(dy, dx)) in offs.iter().enumerate() {
        let ad = &mut dlogit[d * n..(d + 1) * n];
        for ci in 0..c {
            shift_plane(&src[ci * n..(ci + 1) * n], h, w, dy, dx, &mut shifted);
            for ((a, &s), &g) in ad.iter_mut().zip(&shifted).zip(&gd[ci * n..(ci + 1) * n]) {
                *a += s * g;
            }
        }
    }
    let mut mean = vec![T::zero(); n];
    for (ad, wd) in dlogit.chunks_exact(n).zip(wts.chunks_exact(n)) {
        for ((m, &a), &wt) in mean.iter_mut().zip(ad).zip(wd) {
            *m += wt * a;
        }
    }
    for (ad, wd) in dlogit.chunks_exact_mut(n).zip(wts.chunks_exact(n)) {
        for ((a, &m), &wt) in ad.iter_mut().zip(&mean).zip(wd) {
            *a = wt * (*a - m);
        }
    }

    let mut dsrc = vec![T::zero(); c * n];
    let mut dref = vec![T::zero(); c * n];
    let mut dshift = vec![T::zero(); n];
    for (d, &(dy, dx)) in offs.iter().enumerate() {
        let wd = &wts[d * n..(d + 1) * n];
        let dl = &dlogit[d * n..(d + 1) * n];
        for ci in 0..c {
            let plane = ci * n..(ci + 1) * n;
            shift_plane(&src[plane.clone()], h, w, dy, dx, &mut shifted);
            let (g, r) = (&gd[plane.clone()], &refr[plane.clone()]);
            for i in 0..n {
                dshift[i] = wd[i] * g[i] + dl[i] * r[i];
            }
            for ((dr, &l), &s) in dref[plane.clone()].iter_mut().zip(dl).zip(&shifted) {
                *dr += l * s;
            }
            unshift_add(&dshift, h, w, dy, dx, &mut dsrc[plane]);
        }
    }
    Ok((dsrc, dref))
}

/// Softmax weights of one pixel's neighbourhood, in row-major neighbour order.
pub fn neighbourhood_weights<T: Scalar>(
    source: &Tensor<T>,
    reference: &Tensor<T>,
    y: usize,
    x: usize,
    side: usize,
) -> Result<Vec<T>> {
    let (c, h, w) = source.dims3()?;
    if reference.dims3()? != (c, h, w) {
        return dim_err("reference filter operands differ in shape");
    }
    if side.is_multiple_of(2) {
        return contract_err(format!("kernel side {side} is not odd"));
    }
    let n = h * w;
    let (src, refr) = (source.data(), reference.data());
    let r = (side / 2) as isize;
    let i = y * w + x;
    let mut logits = Vec::with_capacity(side * side);
    for dy in -r..=r {
        let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
        for dx in -r..=r {
            let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
            let l = yy * w + xx;
            logits.push((0..c).map(|ci| src[ci * n + l] * refr[ci * n + i]).sum::<T>());
        }
    }
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z: T = exps.iter().copied().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}
