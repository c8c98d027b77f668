//! Deformation estimation and guide-feature alignment.

use crate::diffengine::{Graph, Var};
use crate::error::{contract_err, Result};
use crate::model::layers::{conv, conv_act};
use crate::model::{ModelState, Variant};
use crate::scalar::Scalar;

/// Dense per-pixel offsets in pixel units: 2 channels `(dx, dy)` for
/// resampling, 18 channels `(dx_1, dy_1, ..., dx_9, dy_9)` for the deformable layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DeformationField {
    pub offsets: Var,
    pub dim: usize,
}

/// Encoder-decoder estimate of the guide-to-source deformation.
///
/// Encoder stages are stride-2 3x3 convolutions at constant width; decoder
/// stages upsample by 2, add the matching encoder output and apply a 3x3
/// convolution. A 1x1 head maps to the field dimension.
pub fn estimate_deformation<T: Scalar>(
    g: &mut Graph<T>,
    state: &ModelState<T>,
    f_source: Var,
    f_guide: Var,
) -> Result<DeformationField> {
    let cfg = state.config();
    let (_, h, w) = g.value(f_source).dims3()?;
    let multiple = 1usize << cfg.level_i;
    if h % multiple != 0 || w % multiple != 0 {
        return contract_err(format!(
            "feature extents {h}x{w} must be multiples of {multiple} for level_i = {}",
            cfg.level_i
        ));
    }
    let store = state.params();
    let x0 = g.concat_channels(f_source, f_guide)?;
    let mut skips = Vec::with_capacity(cfg.level_i);
    let mut x = x0;
    for j in 0..cfg.level_i {
        x = conv_act(g, store, &format!("translator.encoder.{j}"), x, 2)?;
        skips.push(x);
    }
    // decoder.0 is the innermost stage
    for j in 0..cfg.level_i {
        let level = cfg.level_i - 1 - j;
        let (_, dh, dw) = g.value(x).dims3()?;
        let mut u = g.resize(x, dh * 2, dw * 2)?;
        if level > 0 {
            u = g.add(u, skips[level - 1])?;
        }
        x = conv_act(g, store, &format!("translator.decoder.{j}"), u, 1)?;
    }
    let offsets = conv(g, store, "translator.offset_head", x, 1)?;
    Ok(DeformationField { offsets, dim: cfg.field_dim() })
}

/// Warps the guide feature by the field: resampling or deformable convolution.
pub fn align_guide<T: Scalar>(g: &mut Graph<T>, state: &ModelState<T>, f_guide: Var, field: DeformationField) -> Result<Var> {
    let cfg = state.config();
    if field.dim != cfg.field_dim() || g.value(field.offsets).dims3()?.0 != field.dim {
        return contract_err(format!(
            "{}-channel field does not fit the {:?} variant (needs {})",
            field.dim,
            cfg.variant,
            cfg.field_dim()
        ));
    }
    match cfg.variant {
        Variant::Re => g.grid_sample(f_guide, field.offsets),
        Variant::De => {
            let w = g.param(state.params(), "translator.deform.weight")?;
            g.deform_conv2d(f_guide, w, field.offsets)
        }
    }
}
