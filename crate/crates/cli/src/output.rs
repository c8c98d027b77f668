//! Output directories, manifests and configuration resolution shared by commands.

use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use robself::data::{save_image, BitDepth};
use robself::model::{parse_pairs, Ablation, RobSelfConfig};
use robself::{Scalar, Tensor};

use crate::args::{ImageFormat, ModelArgs, Precision};
use crate::{CliError, CliResult};

/// Creates `dir`, refusing a non-empty existing directory unless `force`.
pub fn prepare_out_dir(dir: &Path, force: bool) -> CliResult {
    if dir.exists() {
        let occupied = !dir.is_dir() || fs::read_dir(dir)?.next().is_some();
        if occupied && !force {
            return Err(CliError::Usage(format!(
                "output {} already exists; pass --force to write into it",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

pub fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

fn usage(e: robself::Error) -> CliError {
    CliError::Usage(e.to_string())
}

/// Settings resolved from the preset, the configuration file and flags.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub config: RobSelfConfig,
    pub precision: Precision,
    /// `run.*` keys of the configuration file.
    pub run_keys: Vec<(String, String)>,
}

impl Resolved {
    pub fn run_key(&self, key: &str) -> Option<&str> {
        self.run_keys.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

/// Preset, then configuration file keys, then explicit flags.
pub fn resolve_config(m: &ModelArgs) -> CliResult<Resolved> {
    let file = match &m.config {
        Some(p) => Some(fs::read_to_string(p).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", p.display())))?),
        None => None,
    };
    let pairs = match &file {
        Some(text) => parse_pairs(text).map_err(usage)?,
        None => Vec::new(),
    };
    let preset = m.preset.clone().or_else(|| pairs.iter().find(|(k, _)| k == "preset").map(|(_, v)| v.clone()));
    let mut cfg = match (&preset, &file) {
        (Some(name), _) => RobSelfConfig::preset(name).map_err(usage)?,
        (None, Some(_)) => RobSelfConfig::default(),
        (None, None) => return Err(CliError::Usage("give --preset or --config".into())),
    };
    let mut run_keys = Vec::new();
    for (k, v) in pairs {
        if k == "preset" {
            continue;
        }
        if k.starts_with("run.") {
            run_keys.push((k, v));
            continue;
        }
        cfg.set(&k, &v).map_err(usage)?;
    }
    let set = |cfg: &mut RobSelfConfig, k: &str, v: String| cfg.set(k, &v).map_err(usage);
    if let Some(v) = m.seed {
        cfg.seed = v;
    }
    if let Some(v) = &m.variant {
        set(&mut cfg, "variant", v.clone())?;
    }
    if let Some(v) = m.iters {
        cfg.iterations = v;
    }
    if let Some(v) = m.level_i {
        cfg.level_i = v;
    }
    if let Some(v) = &m.eta {
        set(&mut cfg, "eta", v.clone())?;
    }
    if let Some(v) = m.m {
        cfg.kernel_m = v;
    }
    if let Some(v) = m.n {
        cfg.kernel_n = v;
    }
    if let Some(v) = m.channels {
        cfg.channels = v;
    }
    cfg.validate().map_err(usage)?;
    let from_file = run_keys.iter().find(|(k, _)| k == "run.precision").map(|(_, v)| v.as_str());
    let precision = match (m.precision, from_file) {
        (Some(p), _) => p,
        (None, Some("f32")) => Precision::F32,
        (None, Some("f64")) | (None, None) => Precision::F64,
        (None, Some(other)) => return Err(CliError::Usage(format!("unknown run.precision `{other}`"))),
    };
    Ok(Resolved { config: cfg, precision, run_keys })
}

pub fn parse_ablation(text: &str) -> CliResult<Ablation> {
    text.parse().map_err(usage)
}

pub fn precision_name(p: Precision) -> &'static str {
    match p {
        Precision::F32 => "f32",
        Precision::F64 => "f64",
    }
}

/// Manifest text: `run.*` metadata followed by the full configuration, so the
/// file can be passed back through `--config`.
pub fn manifest_text(meta: &[(&str, String)], config: &RobSelfConfig) -> String {
    let mut s = String::from("# robself run manifest\n");
    s.push_str(&format!("run.version = {}\n", env!("CARGO_PKG_VERSION")));
    for (k, v) in meta {
        s.push_str(&format!("run.{k} = {v}\n"));
    }
    s.push_str(&config.to_text());
    s
}

/// Writes an image of the source modality: PNG at the source's depth or an
/// exact float map.
pub fn save_prediction<T: Scalar>(dir: &Path, stem: &str, t: &Tensor<T>, depth: BitDepth, format: ImageFormat) -> CliResult<String> {
    let (ext, depth) = match (format, depth) {
        (ImageFormat::Tfm, _) | (ImageFormat::Auto, BitDepth::Float) => ("tfm", BitDepth::Float),
        (ImageFormat::Png, BitDepth::Float) => ("png", BitDepth::Eight),
        (_, d) => ("png", d),
    };
    let name = format!("{stem}.{ext}");
    save_image(&dir.join(&name), t, depth)?;
    Ok(name)
}

/// Effective worker count: `--jobs`, capped by `ROBSELF_THREADS` when set.
pub fn effective_jobs(requested: usize) -> usize {
    let cap = std::env::var("ROBSELF_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).filter(|&v| v > 0);
    let jobs = requested.max(1);
    cap.map_or(jobs, |c| jobs.min(c))
}
