//! Central finite-difference verification of analytic gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParamStore, Var};
use crate::error::{contract_err, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: f64,
    /// Maximum admissible relative error.
    pub tolerance: f64,
    /// Entries probed per parameter tensor; `0` probes every entry.
    pub samples_per_param: usize,
    /// Denominator floor of the relative error, so that gradients that are
    /// zero up to rounding compare in absolute terms.
    pub scale_floor: f64,
    /// Retries of a failing entry, each with a ten times smaller step, so a
    /// step straddling an activation or sampling kink does not count as a mismatch.
    pub refinements: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-5, tolerance: 1e-3, samples_per_param: 0, scale_floor: 1e-6, refinements: 2, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &GradCheckEntry> {
        self.entries.iter().filter(|e| !e.passed)
    }

    pub fn max_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn eval<F>(params: &ParamStore<f64>, build: &F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = build(&mut g, params)?;
    let v = g.value(loss);
    if !v.is_scalar() {
        return contract_err("gradient check needs a scalar loss");
    }
    Ok(v.data()[0])
}

/// Compares analytic gradients of every parameter in `params` against
/// central differences of the scalar loss produced by `build`.
pub fn grad_check<F>(params: &ParamStore<f64>, build: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut graph = Graph::new();
    graph.register_all(params)?;
    let loss = build(&mut graph, params)?;
    let grads = graph.backward(loss)?;
    drop(graph);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut probe = params.clone();
    let mut entries = Vec::new();
    for (name, value) in params.iter() {
        let analytic = grads.param(name).expect("registered parameter has a gradient");
        let indices = pick_indices(analytic.data(), opts.samples_per_param, &mut rng);
        let mut worst = 0.0f64;
        for &idx in &indices {
            let orig = value.data()[idx];
            let mut best = f64::INFINITY;
            let mut step = opts.step;
            for _ in 0..=opts.refinements {
                probe.get_mut(name).unwrap().data_mut()[idx] = orig + step;
                let plus = eval(&probe, &build)?;
                probe.get_mut(name).unwrap().data_mut()[idx] = orig - step;
                let minus = eval(&probe, &build)?;
                probe.get_mut(name).unwrap().data_mut()[idx] = orig;
                let numeric = (plus - minus) / (2.0 * step);
                let err = relative_error(analytic.data()[idx], numeric, opts.scale_floor);
                if !err.is_nan() {
                    best = best.min(err);
                }
                if best < opts.tolerance {
                    break;
                }
                step *= 0.1;
            }
            worst = worst.max(best);
        }
        entries.push(GradCheckEntry {
            name: name.to_string(),
            max_rel_error: worst,
            checked: indices.len(),
            passed: worst < opts.tolerance,
        });
    }
    Ok(GradCheckReport { tolerance: opts.tolerance, entries })
}

/// All indices, or the largest-magnitude entry plus a seeded random subset.
fn pick_indices(grad: &[f64], samples: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if samples == 0 || grad.len() <= samples {
        return (0..grad.len()).collect();
    }
    let argmax = grad
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let mut picked = vec![argmax];
    for i in rand::seq::index::sample(rng, grad.len(), samples).into_iter() {
        if picked.len() == samples {
            break;
        }
        if i != argmax {
            picked.push(i);
        }
    }
    picked.sort_unstable();
    picked
}
