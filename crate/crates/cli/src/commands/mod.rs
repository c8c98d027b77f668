//! Subcommand implementations and the per-pair pipeline they share.

pub mod bench;
pub mod config;
pub mod gradcheck;
pub mod run;
pub mod synth;

use std::fs;
use std::path::Path;
use std::time::Instant;

use robself::data::{load_pair, save_visualization, write_float_map, PairSource};
use robself::metrics::{EvalReport, EvalRow};
use robself::model::RobSelfConfig;
use robself::optimize::optimize_pair;
use robself::Scalar;

use crate::args::ImageFormat;
use crate::output::save_prediction;
use crate::CliResult;

/// What a processed pair reports back.
#[derive(Clone, Debug)]
pub struct PairResult {
    pub name: String,
    pub row: Option<EvalRow>,
    /// Guide extents after a divisibility crop.
    pub cropped: Option<(usize, usize)>,
    pub seconds: f64,
}

fn lcm(a: usize, b: usize) -> usize {
    let gcd = |mut x: usize, mut y: usize| {
        while y != 0 {
            (x, y) = (y, x % y);
        }
        x
    };
    a / gcd(a, b) * b
}

/// Loads, crops to the required multiple, optimizes and writes every output
/// of one pair into `out`.
pub fn process_pair<T: Scalar>(source: &PairSource, config: &RobSelfConfig, out: &Path, format: ImageFormat) -> CliResult<PairResult> {
    let start = Instant::now();
    let mut pair = load_pair::<T>(source, config)?;
    let multiple = lcm(config.required_multiple(), config.sr_factor);
    let mut cropped = None;
    if let Some(c) = pair.crop_to_multiple(multiple, config.sr_factor)? {
        let (_, h0, w0) = pair.guide_hr.dims3()?;
        let (_, h, w) = c.guide_hr.dims3()?;
        eprintln!("warning: {}: guide {h0}x{w0} is not a multiple of {multiple}; center-cropped to {h}x{w}", pair.name);
        cropped = Some((h, w));
        pair = c;
    }
    let outcome = optimize_pair(&pair, config)?;
    fs::create_dir_all(out)?;
    save_prediction(out, "sr", &outcome.sr, pair.source_depth, format)?;
    if let Some(t) = &outcome.trans {
        save_prediction(out, "trans", t, pair.source_depth, format)?;
    }
    let d = &outcome.diagnostics;
    if let Some(fa) = &d.f_aligned {
        save_visualization(&out.join("aligned_guide.png"), fa)?;
    }
    save_visualization(&out.join("importance.png"), &d.importance)?;
    if let Some(field) = &d.field {
        fs::write(out.join("field.tfm"), write_float_map(field)?)?;
        save_visualization(&out.join("field.png"), field)?;
    }
    fs::write(out.join("trace.csv"), outcome.trace.to_csv())?;
    let row = match &pair.gt_hr {
        Some(gt) => {
            let row = EvalRow::evaluate(pair.name.clone(), &outcome.sr, gt, pair.value_scale, pair.peak())?;
            fs::write(out.join("metrics.csv"), EvalReport { rows: vec![row.clone()] }.to_csv())?;
            Some(row)
        }
        None => None,
    };
    Ok(PairResult { name: pair.name, row, cropped, seconds: start.elapsed().as_secs_f64() })
}
