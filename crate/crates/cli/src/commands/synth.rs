use std::fs;
use std::path::{Path, PathBuf};

use robself::data::{find_image, load_image, luminance, make_synthetic_pair, write_group, BitDepth, MisalignSpec};
use robself::model::Modality;
use robself::tensor::center_crop;
use robself::Tensor;

use crate::args::{ImageFormat, SynthArgs};
use crate::output::{prepare_out_dir, unix_now};
use crate::{CliError, CliResult};

/// Aligned high-resolution inputs: `(name, source, guide)`.
fn collect_inputs(a: &SynthArgs) -> CliResult<Vec<(String, Tensor<f64>, Tensor<f64>)>> {
    let entries: Vec<PathBuf> = {
        let mut v: Vec<PathBuf> = fs::read_dir(&a.input)
            .map_err(|e| CliError::Input(robself::Error::Parse { what: a.input.display().to_string(), detail: e.to_string() }))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        v.sort();
        v
    };
    let stem = |p: &Path| p.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    let mut out = Vec::new();
    if a.luminance {
        for p in entries.iter().filter(|p| p.extension().is_some_and(|e| e == "png" || e == "tfm")) {
            let color = load_image::<f64>(p)?.tensor;
            if color.dims3()?.0 != 3 {
                return Err(CliError::Input(robself::Error::Contract(format!("{} is not a color image", p.display()))));
            }
            out.push((stem(p), luminance(&color)?, color));
        }
    } else {
        for dir in entries.iter().filter(|p| p.is_dir()) {
            let need = |s: &str| find_image(dir, s).ok_or_else(|| robself::Error::MissingFile(dir.join(format!("{s}.png"))));
            out.push((stem(dir), load_image::<f64>(need("hr_source")?)?.tensor, load_image::<f64>(need("hr_guide")?)?.tensor));
        }
    }
    if out.is_empty() {
        return Err(CliError::Input(robself::Error::Contract(format!("no inputs under {}", a.input.display()))));
    }
    Ok(out)
}

pub fn cmd_synth(a: &SynthArgs) -> CliResult {
    if ![2, 4, 8].contains(&a.factor) {
        return Err(CliError::Usage(format!("--factor must be 2, 4 or 8, got {}", a.factor)));
    }
    let modality: Option<Modality> = match &a.modality {
        Some(m) => Some(m.parse().map_err(|e: robself::Error| CliError::Usage(e.to_string()))?),
        None => None,
    };
    let base = MisalignSpec { translation: a.trans, rotation: a.rot, perspective: a.persp, seed: a.seed };
    base.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let inputs = collect_inputs(a)?;
    prepare_out_dir(&a.out, a.force)?;
    let started = unix_now();
    let (ext, depth) = match a.format {
        ImageFormat::Png => ("png", BitDepth::Eight),
        _ => ("tfm", BitDepth::Float),
    };
    for (k, (name, src, guide)) in inputs.iter().enumerate() {
        let (_, h, w) = src.dims3()?;
        let (th, tw) = match a.crop {
            Some(n) => (n.min(h), n.min(w)),
            None => (h, w),
        };
        let (th, tw) = (th / a.factor * a.factor, tw / a.factor * a.factor);
        if (th, tw) != (h, w) && a.crop.is_none() {
            eprintln!("warning: {name}: {h}x{w} is not a multiple of {}; center-cropped to {th}x{tw}", a.factor);
        }
        let (src, guide) = (center_crop(src, th, tw)?, center_crop(guide, th, tw)?);
        let spec = MisalignSpec { seed: a.seed + k as u64, ..base };
        let mut pair = make_synthetic_pair(&src, &guide, &spec, a.factor)?;
        pair.modality = modality;
        pair.source_depth = depth;
        write_group(&a.out.join(name), &pair, a.factor, ext, depth)?;
        println!("{name}: seed {} -> {}", spec.seed, a.out.join(name).display());
    }
    let meta = vec![
        ("command", "synth".to_string()),
        ("input", a.input.display().to_string()),
        ("trans", a.trans.to_string()),
        ("rot", a.rot.to_string()),
        ("persp", a.persp.to_string()),
        ("factor", a.factor.to_string()),
        ("seed", a.seed.to_string()),
        ("luminance", a.luminance.to_string()),
        ("groups", inputs.len().to_string()),
        ("started_unix", format!("{started:.3}")),
        ("finished_unix", format!("{:.3}", unix_now())),
    ];
    let mut text = String::from("# robself synth manifest\n");
    text.push_str(&format!("run.version = {}\n", env!("CARGO_PKG_VERSION")));
    for (k, v) in &meta {
        text.push_str(&format!("run.{k} = {v}\n"));
    }
    fs::write(a.out.join("manifest.txt"), text)?;
    Ok(())
}
