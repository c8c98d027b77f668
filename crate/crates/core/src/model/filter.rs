//! Content-aware reference filter: importance map, threshold and the
//! correlation-weighted self-enhancement of the source feature.

use crate::diffengine::{Graph, KernelMap, Var};
use crate::error::{contract_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{sobel, Tensor};

/// Per-pixel mean over channels of the Sobel gradient magnitude, shape `[H, W]`.
pub fn importance_map<T: Scalar>(feature: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = feature.dims3()?;
    let mut acc = vec![T::zero(); h * w];
    for ci in 0..c {
        let (gx, gy) = sobel(feature.channel(ci), h, w);
        for ((a, x), y) in acc.iter_mut().zip(&gx).zip(&gy) {
            *a += (*x * *x + *y * *y).sqrt();
        }
    }
    let inv = T::one() / T::lit(c as f64);
    acc.iter_mut().for_each(|v| *v *= inv);
    Tensor::new(vec![h, w], acc)
}

/// `eta * mean(M)`.
pub fn importance_threshold<T: Scalar>(importance: &Tensor<T>, eta: T) -> T {
    eta * importance.mean()
}

/// Large kernel where `M > tau`, small kernel otherwise (ties go small);
/// without a threshold every pixel uses the large kernel.
pub fn select_kernels<T: Scalar>(importance: &Tensor<T>, tau: Option<T>, m: usize, n: usize) -> Result<KernelMap> {
    if m.is_multiple_of(2) || n.is_multiple_of(2) {
        return contract_err(format!("kernel sizes must be odd, got m={m} n={n}"));
    }
    let (h, w) = match importance.shape() {
        [h, w] => (*h, *w),
        other => return contract_err(format!("importance map must be H x W, got {other:?}")),
    };
    let sides = importance
        .data()
        .iter()
        .map(|&v| match tau {
            Some(t) if v <= t => n as u16,
            _ => m as u16,
        })
        .collect();
    KernelMap::new(h, w, sides)
}

/// Self-enhancement of `f_source` with softmax weights from its correlation
/// with `f_reference`, using content-dependent kernel sizes.
pub fn reference_filter<T: Scalar>(
    g: &mut Graph<T>,
    f_source: Var,
    f_reference: Var,
    importance: &Tensor<T>,
    tau: Option<T>,
    m: usize,
    n: usize,
) -> Result<(Var, KernelMap)> {
    if m < n {
        return contract_err(format!("large kernel {m} smaller than small kernel {n}"));
    }
    let sizes = select_kernels(importance, tau, m, n)?;
    let out = g.reference_filter(f_source, f_reference, sizes.clone())?;
    Ok((out, sizes))
}
