//! Gradient-check suite over every operator and the whole network at 16x16.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffengine::{grad_check, GradCheckOptions, GradCheckReport, Graph, KernelMap, ParamStore, Var};
use crate::error::{contract_err, Result};
use crate::model::{forward, ModelState, RobSelfConfig, Variant, PRESETS};
use crate::optimize::consistency_loss;
use crate::tensor::Tensor;

/// Operator names accepted by [`run_suite`]; `model` selects the whole-network cases.
pub const SUITE_OPS: [&str; 11] = [
    "conv2d",
    "avg_pool2d",
    "resize",
    "grid_sample",
    "deform_conv2d",
    "leaky_relu",
    "concat_channels",
    "add_scale",
    "l1_mean",
    "reference_filter",
    "model",
];

/// Spatial extent of the whole-network cases.
pub const MODEL_EXTENT: usize = 16;

#[derive(Clone, Debug)]
pub struct SuiteCase {
    pub op: &'static str,
    pub label: String,
    pub report: GradCheckReport,
}

fn random(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape and length agree")
}

fn store(entries: Vec<(&str, Tensor<f64>)>) -> Result<ParamStore<f64>> {
    let mut s = ParamStore::new();
    for (name, t) in entries {
        s.insert(name, t)?;
    }
    Ok(s)
}

/// `sum(probe * x)` with a fixed random probe.
fn probe(g: &mut Graph<f64>, x: Var, seed: u64) -> Result<Var> {
    let p = random(g.value(x).shape(), seed, -1.0, 1.0);
    let value: f64 = g.value(x).data().iter().zip(p.data()).map(|(a, b)| a * b).sum();
    g.custom(&[x], Tensor::scalar(value), move |grad, _| vec![p.scale(grad.data()[0])])
}

fn away_from_zero(mut t: Tensor<f64>) -> Tensor<f64> {
    t.data_mut().iter_mut().filter(|v| v.abs() < 1e-3).for_each(|v| *v = 0.5);
    t
}

fn operator_case(op: &'static str, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let x2 = || random(&[2, 6, 6], 1, -1.0, 1.0);
    match op {
        "conv2d" => {
            let p = store(vec![
                ("x", x2()),
                ("w", random(&[3, 2, 3, 3], 2, -1.0, 1.0)),
                ("b", random(&[3], 3, -1.0, 1.0)),
                ("w2", random(&[3, 3, 3, 3], 22, -1.0, 1.0)),
            ])?;
            grad_check(
                &p,
                |g, p| {
                    let (x, w, b) = (g.param(p, "x")?, g.param(p, "w")?, g.param(p, "b")?);
                    let y = g.conv2d(x, w, Some(b), 1, 1)?;
                    let w2 = g.param(p, "w2")?;
                    let z = g.conv2d(y, w2, None, 2, 1)?;
                    let yz = g.avg_pool2d(y, 2)?;
                    let both = g.add(z, yz)?;
                    probe(g, both, 4)
                },
                opts,
            )
        }
        "avg_pool2d" => grad_check(&store(vec![("x", x2())])?, |g, p| {
            let x = g.param(p, "x")?;
            let y = g.avg_pool2d(x, 3)?;
            probe(g, y, 5)
        }, opts),
        "resize" => grad_check(&store(vec![("x", x2())])?, |g, p| {
            let x = g.param(p, "x")?;
            let y = g.resize(x, 12, 9)?;
            probe(g, y, 6)
        }, opts),
        "grid_sample" => {
            let smooth = Tensor::from_fn3(2, 6, 6, |c, y, x| (0.7 * x as f64 + c as f64).sin() + 0.5 * (0.4 * y as f64).cos());
            let p = store(vec![("x", smooth), ("off", random(&[2, 6, 6], 7, -0.8, 0.8))])?;
            grad_check(&p, |g, p| {
                let (x, o) = (g.param(p, "x")?, g.param(p, "off")?);
                let y = g.grid_sample(x, o)?;
                probe(g, y, 8)
            }, opts)
        }
        "deform_conv2d" => {
            let p = store(vec![
                ("x", x2()),
                ("w", random(&[2, 2, 3, 3], 9, -1.0, 1.0)),
                ("off", random(&[18, 6, 6], 10, -0.7, 0.7)),
            ])?;
            grad_check(&p, |g, p| {
                let (x, w, o) = (g.param(p, "x")?, g.param(p, "w")?, g.param(p, "off")?);
                let y = g.deform_conv2d(x, w, o)?;
                probe(g, y, 11)
            }, opts)
        }
        "leaky_relu" => grad_check(&store(vec![("x", away_from_zero(x2()))])?, |g, p| {
            let x = g.param(p, "x")?;
            let y = g.leaky_relu(x, 0.1)?;
            probe(g, y, 12)
        }, opts),
        "concat_channels" => {
            let p = store(vec![("a", x2()), ("b", random(&[1, 6, 6], 13, -1.0, 1.0))])?;
            grad_check(&p, |g, p| {
                let (a, b) = (g.param(p, "a")?, g.param(p, "b")?);
                let y = g.concat_channels(a, b)?;
                probe(g, y, 14)
            }, opts)
        }
        "add_scale" => {
            let p = store(vec![("a", x2()), ("b", random(&[2, 6, 6], 15, -1.0, 1.0))])?;
            grad_check(&p, |g, p| {
                let (a, b) = (g.param(p, "a")?, g.param(p, "b")?);
                let s = g.scale(b, -2.5)?;
                let y = g.add(a, s)?;
                probe(g, y, 16)
            }, opts)
        }
        "l1_mean" => {
            let target = random(&[2, 6, 6], 17, -1.0, 1.0);
            grad_check(&store(vec![("a", x2())])?, move |g, p| {
                let a = g.param(p, "a")?;
                g.l1_mean(a, &target)
            }, opts)
        }
        "reference_filter" => {
            let sides: Vec<u16> = (0..36).map(|i| if i % 3 == 0 { 5 } else { 3 }).collect();
            let p = store(vec![("src", x2()), ("ref", random(&[2, 6, 6], 18, -1.0, 1.0))])?;
            grad_check(&p, move |g, p| {
                let (s, r) = (g.param(p, "src")?, g.param(p, "ref")?);
                let y = g.reference_filter(s, r, KernelMap::new(6, 6, sides.clone())?)?;
                probe(g, y, 19)
            }, opts)
        }
        other => contract_err(format!("unknown operator `{other}` (known: {})", SUITE_OPS.join(", "))),
    }
}

/// Preset shrunk to the suite scale: few channels and an estimator no deeper
/// than the extent allows.
pub fn model_case_config(preset: &str, variant: Variant) -> Result<RobSelfConfig> {
    let mut cfg = RobSelfConfig::preset(preset)?;
    cfg.variant = variant;
    cfg.channels = 4;
    cfg.level_i = cfg.level_i.min(MODEL_EXTENT.trailing_zeros() as usize);
    cfg.seed = 3;
    Ok(cfg)
}

/// Whole-network check: consistency loss of a forward pass, differentiated
/// with respect to every network parameter. The offset head is randomized
/// so sampling positions sit away from the integer grid.
pub fn model_case(config: &RobSelfConfig, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut state = ModelState::<f64>::new(config.clone())?;
    state.randomize_offset_head(0.3, config.seed ^ 0x5eed);
    let f = config.sr_factor;
    let source = random(&[config.phi, MODEL_EXTENT / f, MODEL_EXTENT / f], 20, 0.0, 1.0);
    let guide = random(&[config.psi, MODEL_EXTENT, MODEL_EXTENT], 21, 0.0, 1.0);
    let params = state.params().clone();
    grad_check(
        &params,
        |g, p| {
            let mut s = state.clone();
            *s.params_mut() = p.clone();
            let out = forward(g, &s, &source, &guide)?;
            Ok(consistency_loss(g, out.sr, out.trans, &source, f, config.lambda)?.total)
        },
        opts,
    )
}

/// Runs the operator cases and the whole-network cases for every preset and
/// both variants, or only the cases of `only`.
pub fn run_suite(opts: &GradCheckOptions, only: Option<&str>) -> Result<Vec<SuiteCase>> {
    if let Some(op) = only {
        if !SUITE_OPS.contains(&op) {
            return contract_err(format!("unknown operator `{op}` (known: {})", SUITE_OPS.join(", ")));
        }
    }
    let mut cases = Vec::new();
    for op in SUITE_OPS {
        if only.is_some_and(|o| o != op) {
            continue;
        }
        if op != "model" {
            cases.push(SuiteCase { op, label: op.to_string(), report: operator_case(op, opts)? });
            continue;
        }
        let model_opts = GradCheckOptions { samples_per_param: if opts.samples_per_param == 0 { 6 } else { opts.samples_per_param }, ..opts.clone() };
        for preset in PRESETS {
            for variant in [Variant::Re, Variant::De] {
                let cfg = model_case_config(preset, variant)?;
                let report = model_case(&cfg, &model_opts)?;
                cases.push(SuiteCase { op, label: format!("model {preset} {variant}"), report });
            }
        }
    }
    Ok(cases)
}
