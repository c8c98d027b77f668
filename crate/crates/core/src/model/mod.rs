//! The super-resolution network and its forward pass.

mod config;
mod filter;
mod layers;
mod translator;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffengine::{Graph, KernelMap, ParamStore, Var, DEFORM_TAPS};
use crate::error::{contract_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{bilinear_resize, Tensor};

pub use config::{parse_pairs, Ablation, Modality, RobSelfConfig, Variant, PRESETS};
pub use filter::{importance_map, importance_threshold, reference_filter, select_kernels};
pub use layers::{extract_features, predict, HeadKind};
pub use translator::{align_guide, estimate_deformation, DeformationField};

/// Slope of the leaky rectifier used throughout the network.
pub const LEAKY_SLOPE: f64 = 0.1;

/// Parameters of one network instance plus the configuration that shaped them.
#[derive(Clone, Debug)]
pub struct ModelState<T: Scalar> {
    config: RobSelfConfig,
    params: ParamStore<T>,
}

impl<T: Scalar> ModelState<T> {
    /// Fresh parameters drawn from the configuration's seed. The offset head
    /// starts at zero so the initial alignment is the identity.
    pub fn new(config: RobSelfConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut p = ParamStore::new();
        let c = config.channels;
        layers::init_conv(&mut p, &mut rng, "extract.source.0", c, config.phi, 3, true)?;
        layers::init_conv(&mut p, &mut rng, "extract.source.1", c, c, 3, true)?;
        layers::init_conv(&mut p, &mut rng, "extract.guide.0", c, config.psi, 3, true)?;
        layers::init_conv(&mut p, &mut rng, "extract.guide.1", c, c, 3, true)?;
        if config.ablation.has_alignment() {
            for j in 0..config.level_i {
                let c_in = if j == 0 { 2 * c } else { c };
                layers::init_conv(&mut p, &mut rng, &format!("translator.encoder.{j}"), c, c_in, 3, true)?;
            }
            for j in 0..config.level_i {
                layers::init_conv(&mut p, &mut rng, &format!("translator.decoder.{j}"), c, c, 3, true)?;
            }
            layers::zero_conv(&mut p, "translator.offset_head", config.field_dim(), c, 1)?;
            if config.variant == Variant::De {
                layers::init_conv(&mut p, &mut rng, "translator.deform", c, c, 3, false)?;
            }
        }
        if !config.ablation.has_filter() {
            layers::init_conv(&mut p, &mut rng, "fusion", c, 2 * c, 1, true)?;
        }
        let mut kinds = vec![HeadKind::Sr];
        if config.ablation.has_translator() {
            kinds.push(HeadKind::Translation);
        }
        for kind in kinds {
            let prefix = layers::head_prefix(config.separate_heads, kind);
            if p.contains(&format!("{prefix}.0.weight")) {
                continue;
            }
            layers::init_conv(&mut p, &mut rng, &format!("{prefix}.0"), c, c, 3, true)?;
            layers::init_conv(&mut p, &mut rng, &format!("{prefix}.1"), config.phi, c, 3, true)?;
        }
        Ok(Self { config, params: p })
    }

    pub fn config(&self) -> &RobSelfConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Replaces the offset head with small random weights, so the field is
    /// non-zero (used to exercise the alignment path away from the identity).
    pub fn randomize_offset_head(&mut self, scale: f64, seed: u64) {
        use rand::distributions::{Distribution, Uniform};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Uniform::new_inclusive(-scale, scale);
        for name in ["translator.offset_head.weight", "translator.offset_head.bias"] {
            if let Some(t) = self.params.get_mut(name) {
                t.data_mut().iter_mut().for_each(|v| *v = T::lit(dist.sample(&mut rng)));
            }
        }
    }
}

/// Result of one forward pass, as handles into the graph it was recorded on.
#[derive(Clone, Debug)]
pub struct ForwardOutput<T: Scalar> {
    pub sr: Var,
    /// Absent when the translator is ablated.
    pub trans: Option<Var>,
    pub f_source: Var,
    pub f_guide: Var,
    pub f_aligned: Option<Var>,
    pub field: Option<DeformationField>,
    pub importance: Tensor<T>,
    pub tau: Option<T>,
    pub kernels: Option<KernelMap>,
}

/// Detached copies of the intermediate quantities of a forward pass.
#[derive(Clone, Debug)]
pub struct Diagnostics<T: Scalar> {
    pub f_aligned: Option<Tensor<T>>,
    pub field: Option<Tensor<T>>,
    pub importance: Tensor<T>,
    pub tau: Option<T>,
    /// Fraction of pixels filtered with the large kernel (1 when no threshold is used).
    pub large_kernel_fraction: f64,
}

impl<T: Scalar> ForwardOutput<T> {
    pub fn diagnostics(&self, g: &Graph<T>, config: &RobSelfConfig) -> Diagnostics<T> {
        let large_kernel_fraction = self
            .kernels
            .as_ref()
            .map_or(0.0, |k| k.fraction_with(config.kernel_m as u16));
        Diagnostics {
            f_aligned: self.f_aligned.map(|v| g.value(v).clone()),
            field: self.field.map(|f| g.value(f.offsets).clone()),
            importance: self.importance.clone(),
            tau: self.tau,
            large_kernel_fraction,
        }
    }
}

/// Full pipeline: upsample, extract, estimate and align, filter, predict.
pub fn forward<T: Scalar>(
    g: &mut Graph<T>,
    state: &ModelState<T>,
    source_lr: &Tensor<T>,
    guide_hr: &Tensor<T>,
) -> Result<ForwardOutput<T>> {
    let cfg = state.config();
    let (_, h, w) = source_lr.dims3()?;
    let (_, gh, gw) = guide_hr.dims3()?;
    if gh != h * cfg.sr_factor || gw != w * cfg.sr_factor {
        return contract_err(format!(
            "guide {gh}x{gw} is not {}x the source {h}x{w}",
            cfg.sr_factor
        ));
    }
    let multiple = cfg.required_multiple();
    if gh % multiple != 0 || gw % multiple != 0 {
        return contract_err(format!("guide extents {gh}x{gw} must be multiples of {multiple}"));
    }
    g.register_all(state.params())?;

    let up = bilinear_resize(source_lr, gh, gw)?;
    let (f_source, f_guide) = extract_features(g, state, &up, guide_hr)?;

    let (f_aligned, field) = if cfg.ablation.has_alignment() {
        let field = estimate_deformation(g, state, f_source, f_guide)?;
        (Some(align_guide(g, state, f_guide, field)?), Some(field))
    } else if cfg.ablation.has_translator() {
        (Some(f_guide), None)
    } else {
        (None, None)
    };
    let reference = f_aligned.unwrap_or(f_guide);

    let importance = importance_map(g.value(f_source))?;
    let tau = cfg.eta.map(|eta| importance_threshold(&importance, T::lit(eta)));

    let (enhanced, kernels) = if cfg.ablation.has_filter() {
        let (out, k) = reference_filter(g, f_source, reference, &importance, tau, cfg.kernel_m, cfg.kernel_n)?;
        (out, Some(k))
    } else {
        let cat = g.concat_channels(f_source, reference)?;
        (layers::conv(g, state.params(), "fusion", cat, 1)?, None)
    };

    let sr = predict(g, state, enhanced, HeadKind::Sr)?;
    let trans = match f_aligned {
        Some(fa) => Some(predict(g, state, fa, HeadKind::Translation)?),
        None => None,
    };
    Ok(ForwardOutput { sr, trans, f_source, f_guide, f_aligned, field, importance, tau, kernels })
}

/// Offset-channel count of the deformable variant.
pub const DEFORM_FIELD_DIM: usize = 2 * DEFORM_TAPS;
