use std::fs;
use std::path::PathBuf;

use robself::data::PairSource;

use super::process_pair;
use crate::args::{Precision, RunArgs};
use crate::output::{manifest_text, parse_ablation, precision_name, prepare_out_dir, resolve_config, unix_now};
use crate::{CliError, CliResult};

pub fn cmd_run(a: &RunArgs) -> CliResult {
    let mut resolved = resolve_config(&a.model)?;
    if let Some(ab) = &a.ablate {
        resolved.config.ablation = parse_ablation(ab)?;
    }
    let path = |key: &str| resolved.run_key(&format!("run.{key}")).map(PathBuf::from);
    let source = match (&a.pair, &a.source, &a.guide) {
        (Some(dir), _, _) => PairSource::RealMis(dir.clone()),
        (None, Some(s), Some(g)) => PairSource::Flat { source: s.clone(), guide: g.clone(), gt: a.gt.clone() },
        _ => match (path("pair"), path("source"), path("guide")) {
            (Some(dir), _, _) => PairSource::RealMis(dir),
            (None, Some(s), Some(g)) => PairSource::Flat { source: s, guide: g, gt: path("gt") },
            _ => return Err(CliError::Usage("give --pair or --source/--guide".into())),
        },
    };
    prepare_out_dir(&a.out, a.force)?;

    let cfg = &resolved.config;
    let started = unix_now();
    let result = match resolved.precision {
        Precision::F32 => process_pair::<f32>(&source, cfg, &a.out, a.format)?,
        Precision::F64 => process_pair::<f64>(&source, cfg, &a.out, a.format)?,
    };
    let mut meta = vec![("command", "run".to_string())];
    match &source {
        PairSource::RealMis(dir) => meta.push(("pair", dir.display().to_string())),
        PairSource::Flat { source, guide, gt } => {
            meta.push(("source", source.display().to_string()));
            meta.push(("guide", guide.display().to_string()));
            if let Some(gt) = gt {
                meta.push(("gt", gt.display().to_string()));
            }
        }
    }
    meta.push(("seed", cfg.seed.to_string()));
    meta.push(("precision", precision_name(resolved.precision).to_string()));
    if let Some((h, w)) = result.cropped {
        meta.push(("crop", format!("{h}x{w}")));
    }
    meta.push(("started_unix", format!("{started:.3}")));
    meta.push(("finished_unix", format!("{:.3}", unix_now())));
    fs::write(a.out.join("manifest.txt"), manifest_text(&meta, cfg))?;

    match &result.row {
        Some(r) => println!("{}: rmse {:.6} psnr {:.3} dB ({:.1}s)", result.name, r.rmse, r.psnr, result.seconds),
        None => println!("{}: done ({:.1}s)", result.name, result.seconds),
    }
    Ok(())
}
