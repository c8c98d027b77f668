use std::collections::BTreeMap;

use crate::diffengine::{Gradients, ParamStore};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Bias-corrected Adam moments for every parameter of a store.
#[derive(Clone, Debug)]
pub struct AdamState<T: Scalar> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: BTreeMap<String, Tensor<T>>,
    second: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        Self::with_constants(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_constants(params: &ParamStore<T>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: BTreeMap<String, Tensor<T>> =
            params.iter().map(|(k, v)| (k.to_string(), Tensor::zeros(v.shape().to_vec()))).collect();
        Self { beta1, beta2, eps, step: 0, first: zeros.clone(), second: zeros }
    }

    /// Number of completed updates.
    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor<T>> {
        self.first.get(name)
    }

    pub fn second_moment(&self, name: &str) -> Option<&Tensor<T>> {
        self.second.get(name)
    }

    /// One update of every parameter that has a gradient. Nothing is
    /// modified when any gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>, lr: f64) -> Result<()> {
        for (name, g) in grads.iter() {
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient { param: name.to_string() });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (one, eps) = (T::one(), T::lit(self.eps));
        let bc1 = T::lit(1.0 - self.beta1.powi(t));
        let bc2 = T::lit(1.0 - self.beta2.powi(t));
        let lr = T::lit(lr);
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.param(name) else { continue };
            let m = self.first.get_mut(name).expect("moment allocated for every parameter");
            let v = self.second.get_mut(name).expect("moment allocated for every parameter");
            p.expect_same_shape(g)?;
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
