//! Per-pair online optimization.

mod adam;
mod schedule;
mod trace;

use std::time::Instant;

use crate::data::ImagePair;
use crate::diffengine::{Graph, Var};
use crate::error::{contract_err, Error, Result};
use crate::model::{forward, Diagnostics, ModelState, RobSelfConfig};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use adam::AdamState;
pub use schedule::lr_at;
pub use trace::{IterRecord, OptimTrace, TRACE_HEADER};

/// Graph handles of the consistency loss and its two terms.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub sr: Var,
    pub trans: Option<Var>,
}

/// `l1(pool(sr), lr) + lambda * l1(pool(trans), lr)`; without a translation
/// prediction the second term is absent.
pub fn consistency_loss<T: Scalar>(
    g: &mut Graph<T>,
    sr: Var,
    trans: Option<Var>,
    source_lr: &Tensor<T>,
    sr_factor: usize,
    lambda: f64,
) -> Result<LossVars> {
    let check = |v: Var, g: &Graph<T>| -> Result<()> {
        let (c, h, w) = g.value(v).dims3()?;
        let (lc, lh, lw) = source_lr.dims3()?;
        if (c, h, w) != (lc, lh * sr_factor, lw * sr_factor) {
            return contract_err(format!(
                "prediction {c}x{h}x{w} does not match {sr_factor}x the source {lc}x{lh}x{lw}"
            ));
        }
        Ok(())
    };
    check(sr, g)?;
    let pooled = g.avg_pool2d(sr, sr_factor)?;
    let l_sr = g.l1_mean(pooled, source_lr)?;
    let Some(trans) = trans else {
        return Ok(LossVars { total: l_sr, sr: l_sr, trans: None });
    };
    check(trans, g)?;
    let pooled = g.avg_pool2d(trans, sr_factor)?;
    let l_tr = g.l1_mean(pooled, source_lr)?;
    let weighted = g.scale(l_tr, T::lit(lambda))?;
    let total = g.add(l_sr, weighted)?;
    Ok(LossVars { total, sr: l_sr, trans: Some(l_tr) })
}

/// Loss values of a forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValues {
    pub sr: f64,
    pub trans: f64,
    pub total: f64,
}

impl LossValues {
    fn read<T: Scalar>(g: &Graph<T>, l: &LossVars) -> Self {
        let v = |x: Var| g.value(x).data()[0].as_f64();
        Self { sr: v(l.sr), trans: l.trans.map_or(0.0, v), total: v(l.total) }
    }
}

/// Everything an optimization run produces.
#[derive(Clone, Debug)]
pub struct PairOutcome<T: Scalar> {
    /// Super-resolved source, in the units of the input pair.
    pub sr: Tensor<T>,
    /// Translation prediction (absent when the translator is ablated).
    pub trans: Option<Tensor<T>>,
    pub diagnostics: Diagnostics<T>,
    pub trace: OptimTrace,
    /// Losses of the returned predictions.
    pub final_loss: LossValues,
    pub state: ModelState<T>,
}

/// Values above 1 are scaled into the unit range for optimization.
fn unit_scale<T: Scalar>(t: &Tensor<T>) -> T {
    let max = t.max();
    if max > T::one() {
        max
    } else {
        T::one()
    }
}

fn divergence(iteration: usize, err: Error, trace: &OptimTrace) -> Error {
    match err {
        Error::NonFinite { .. } | Error::NonFiniteGradient { .. } => Error::Divergence {
            iteration,
            reason: err.to_string(),
            trace: Box::new(trace.clone()),
        },
        other => other,
    }
}

/// Optimizes a freshly initialized model on a single pair for
/// `config.iterations` Adam steps and returns its final predictions.
pub fn optimize_pair<T: Scalar>(pair: &ImagePair<T>, config: &RobSelfConfig) -> Result<PairOutcome<T>> {
    optimize_pair_with(pair, config, |_| {})
}

/// Like [`optimize_pair`], calling `observe` after every iteration.
pub fn optimize_pair_with<T: Scalar>(
    pair: &ImagePair<T>,
    config: &RobSelfConfig,
    mut observe: impl FnMut(&IterRecord),
) -> Result<PairOutcome<T>> {
    let mut state = ModelState::<T>::new(config.clone())?;
    let norm = unit_scale(&pair.source_lr);
    let source = pair.source_lr.scale(T::one() / norm);
    let guide_norm = unit_scale(&pair.guide_hr);
    let guide = pair.guide_hr.scale(T::one() / guide_norm);

    let mut adam = AdamState::new(state.params());
    let mut trace = OptimTrace::default();
    for iter in 0..config.iterations {
        let lr = lr_at(iter, config.lr_init, config.lr_decay, config.lr_decay_every);
        let start = Instant::now();
        let step = (|| -> Result<LossValues> {
            let mut g = Graph::new();
            let out = forward(&mut g, &state, &source, &guide)?;
            let loss = consistency_loss(&mut g, out.sr, out.trans, &source, config.sr_factor, config.lambda)?;
            let values = LossValues::read(&g, &loss);
            let grads = g.backward(loss.total)?;
            drop(g);
            adam.step(state.params_mut(), &grads, lr)?;
            Ok(values)
        })()
        .map_err(|e| divergence(iter, e, &trace))?;
        let record = IterRecord {
            iter,
            lr,
            loss_sr: step.sr,
            loss_trans: step.trans,
            loss_total: step.total,
            ms: start.elapsed().as_secs_f64() * 1e3,
        };
        observe(&record);
        trace.records.push(record);
    }

    let mut g = Graph::new();
    let out = forward(&mut g, &state, &source, &guide).map_err(|e| divergence(config.iterations, e, &trace))?;
    let loss = consistency_loss(&mut g, out.sr, out.trans, &source, config.sr_factor, config.lambda)?;
    let final_loss = LossValues::read(&g, &loss);
    let diagnostics = out.diagnostics(&g, config);
    trace.large_kernel_fraction = diagnostics.large_kernel_fraction;
    let sr = g.value(out.sr).scale(norm);
    let trans = out.trans.map(|v| g.value(v).scale(norm));
    Ok(PairOutcome { sr, trans, diagnostics, trace, final_loss, state })
}
