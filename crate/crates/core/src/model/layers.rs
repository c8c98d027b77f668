//! Parameter initialization, feature extraction and prediction heads.

use rand::distributions::{Distribution, Uniform};
use rand_chacha::ChaCha8Rng;

use crate::diffengine::{Graph, ParamStore, Var};
use crate::error::{dim_err, Result};
use crate::model::{ModelState, LEAKY_SLOPE};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Fan-in scaled uniform weights (He bound for the leaky rectifier) and zero bias.
pub(crate) fn init_conv<T: Scalar>(
    store: &mut ParamStore<T>,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    c_out: usize,
    c_in: usize,
    k: usize,
    bias: bool,
) -> Result<()> {
    let fan_in = (c_in * k * k) as f64;
    let bound = (6.0 / ((1.0 + LEAKY_SLOPE * LEAKY_SLOPE) * fan_in)).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    let data = (0..c_out * c_in * k * k).map(|_| T::lit(dist.sample(rng))).collect();
    store.insert(format!("{prefix}.weight"), Tensor::new(vec![c_out, c_in, k, k], data)?)?;
    if bias {
        store.insert(format!("{prefix}.bias"), Tensor::zeros(vec![c_out]))?;
    }
    Ok(())
}

pub(crate) fn zero_conv<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, c_out: usize, c_in: usize, k: usize) -> Result<()> {
    store.insert(format!("{prefix}.weight"), Tensor::zeros(vec![c_out, c_in, k, k]))?;
    store.insert(format!("{prefix}.bias"), Tensor::zeros(vec![c_out]))?;
    Ok(())
}

/// Convolution with the parameters stored under `prefix`; padding keeps the size for stride 1.
pub(crate) fn conv<T: Scalar>(g: &mut Graph<T>, store: &ParamStore<T>, prefix: &str, x: Var, stride: usize) -> Result<Var> {
    let w = g.param(store, &format!("{prefix}.weight"))?;
    let bias_name = format!("{prefix}.bias");
    let b = if store.contains(&bias_name) { Some(g.param(store, &bias_name)?) } else { None };
    let k = g.value(w).shape()[2];
    g.conv2d(x, w, b, stride, (k - 1) / 2)
}

fn act<T: Scalar>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    g.leaky_relu(x, T::lit(LEAKY_SLOPE))
}

/// Two 3x3 convolutions with an activation between.
fn conv_pair<T: Scalar>(g: &mut Graph<T>, store: &ParamStore<T>, prefix: &str, x: Var) -> Result<Var> {
    let h = conv(g, store, &format!("{prefix}.0"), x, 1)?;
    let h = act(g, h)?;
    conv(g, store, &format!("{prefix}.1"), h, 1)
}

pub(crate) fn conv_act<T: Scalar>(g: &mut Graph<T>, store: &ParamStore<T>, prefix: &str, x: Var, stride: usize) -> Result<Var> {
    let h = conv(g, store, prefix, x, stride)?;
    act(g, h)
}

/// Source and guide features from the upsampled source and the guide.
pub fn extract_features<T: Scalar>(
    g: &mut Graph<T>,
    state: &ModelState<T>,
    up_source: &Tensor<T>,
    guide: &Tensor<T>,
) -> Result<(Var, Var)> {
    let (phi, hs, ws) = up_source.dims3()?;
    let (psi, hg, wg) = guide.dims3()?;
    if (hs, ws) != (hg, wg) {
        return dim_err(format!("upsampled source is {hs}x{ws} but the guide is {hg}x{wg}"));
    }
    let cfg = state.config();
    if phi != cfg.phi || psi != cfg.psi {
        return dim_err(format!(
            "inputs have {phi}/{psi} channels, configuration expects {}/{}",
            cfg.phi, cfg.psi
        ));
    }
    let s = g.constant(up_source.clone());
    let gd = g.constant(guide.clone());
    let fs = conv_pair(g, state.params(), "extract.source", s)?;
    let fg = conv_pair(g, state.params(), "extract.guide", gd)?;
    Ok((fs, fg))
}

/// Which prediction branch a head serves.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadKind {
    Translation,
    Sr,
}

pub(crate) fn head_prefix(separate: bool, kind: HeadKind) -> &'static str {
    match (separate, kind) {
        (false, _) => "head.shared",
        (true, HeadKind::Translation) => "head.trans",
        (true, HeadKind::Sr) => "head.sr",
    }
}

/// Maps a `C`-channel feature to a `phi`-channel image.
pub fn predict<T: Scalar>(g: &mut Graph<T>, state: &ModelState<T>, feature: Var, head: HeadKind) -> Result<Var> {
    let prefix = head_prefix(state.config().separate_heads, head);
    conv_pair(g, state.params(), prefix, feature)
}
