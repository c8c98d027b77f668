#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robself::diffengine::{Graph, Var};
use robself::{Result, Tensor};

pub fn random(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// `sum(probe * x)` for a fixed random probe; a scalar whose gradient
/// exercises every output entry with a distinct weight.
pub fn probe_loss(g: &mut Graph<f64>, x: Var, seed: u64) -> Result<Var> {
    let probe = random(g.value(x).shape(), seed ^ 0x9e37, -1.0, 1.0);
    let value: f64 = g.value(x).data().iter().zip(probe.data()).map(|(a, b)| a * b).sum();
    g.custom(&[x], Tensor::scalar(value), move |grad, _| vec![probe.scale(grad.data()[0])])
}

/// Plain sum as a custom operator.
pub fn sum(g: &mut Graph<f64>, x: Var) -> Result<Var> {
    let value = g.value(x).sum();
    g.custom(&[x], Tensor::scalar(value), |grad, inputs| {
        vec![Tensor::full(inputs[0].shape().to_vec(), grad.data()[0])]
    })
}

/// Bilinear sample with positions clamped into the grid first.
pub fn bilinear(plane: &[f64], h: usize, w: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let at = |yy: usize, xx: usize| plane[yy * w + xx];
    (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1.0 - fx) * at(y1, x0) + fx * at(y1, x1))
}
