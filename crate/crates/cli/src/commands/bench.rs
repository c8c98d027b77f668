use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use robself::data::PairSource;
use robself::metrics::{EvalReport, EvalRow};
use robself::model::{Ablation, RobSelfConfig};
use robself::Scalar;

use super::{process_pair, PairResult};
use crate::args::{BenchArgs, ImageFormat, Precision};
use crate::output::{effective_jobs, manifest_text, parse_ablation, precision_name, prepare_out_dir, resolve_config, unix_now};
use crate::{CliError, CliResult};

/// Subdirectories of `root`, sorted by name.
pub fn list_groups(root: &Path) -> CliResult<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| CliError::Input(robself::Error::Parse { what: root.display().to_string(), detail: e.to_string() }))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(CliError::Input(robself::Error::Contract(format!("no pair groups under {}", root.display()))));
    }
    Ok(dirs)
}

type Slot = Option<CliResult<PairResult>>;

/// Runs every group with up to `jobs` workers; results keep input order.
pub fn run_groups<T: Scalar>(
    groups: &[PathBuf],
    config: &RobSelfConfig,
    out: &Path,
    format: ImageFormat,
    jobs: usize,
) -> Vec<CliResult<PairResult>> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Slot>> = Mutex::new((0..groups.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.min(groups.len()).max(1) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(dir) = groups.get(i) else { break };
                let name = dir.file_name().map_or_else(|| format!("group{i}"), |n| n.to_string_lossy().into_owned());
                let r = process_pair::<T>(&PairSource::RealMis(dir.clone()), config, &out.join(&name), format);
                match &r {
                    Ok(p) => eprintln!("[{}/{}] {name} {} ({:.1}s)", i + 1, groups.len(), config.ablation, p.seconds),
                    Err(e) => eprintln!("[{}/{}] {name} {} failed: {e}", i + 1, groups.len(), config.ablation),
                }
                slots.lock().expect("result slots poisoned")[i] = Some(r);
            });
        }
    });
    slots.into_inner().expect("result slots poisoned").into_iter().map(|r| r.expect("every group processed")).collect()
}

fn table_row(ablation: Ablation, report: &EvalReport) -> String {
    let yes = |b: bool| if b { "yes" } else { "no" };
    let (rmse, psnr) = report.aggregate().map_or((String::new(), String::new()), |m| (m.rmse.to_string(), m.psnr.to_string()));
    format!("{ablation},{},{},{rmse},{psnr}\n", yes(ablation.has_translator()), yes(ablation.has_filter()))
}

pub const ABLATION_HEADER: &str = "ablation,translator,filter,rmse,psnr";

pub fn cmd_bench(a: &BenchArgs) -> CliResult {
    let resolved = resolve_config(&a.model)?;
    let settings: Vec<Ablation> = if a.ablate == "table" { Ablation::TABLE.to_vec() } else { vec![parse_ablation(&a.ablate)?] };
    let groups = list_groups(&a.groups)?;
    prepare_out_dir(&a.out, a.force)?;
    let jobs = effective_jobs(a.jobs);
    let started = unix_now();

    let mut table = format!("{ABLATION_HEADER}\n");
    let mut failures = String::new();
    let (mut ok, mut first_err) = (0usize, None);
    for &ablation in &settings {
        let cfg = RobSelfConfig { ablation, ..resolved.config.clone() };
        let dir = if settings.len() > 1 { a.out.join(ablation.to_string()) } else { a.out.clone() };
        let results = match resolved.precision {
            Precision::F32 => run_groups::<f32>(&groups, &cfg, &dir, a.format, jobs),
            Precision::F64 => run_groups::<f64>(&groups, &cfg, &dir, a.format, jobs),
        };
        let mut rows: Vec<EvalRow> = Vec::new();
        for (group, r) in groups.iter().zip(results) {
            match r {
                Ok(p) => {
                    ok += 1;
                    let meta = vec![
                        ("command", "bench".to_string()),
                        ("pair", group.display().to_string()),
                        ("seed", cfg.seed.to_string()),
                        ("precision", precision_name(resolved.precision).to_string()),
                    ];
                    let name = group.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
                    fs::write(dir.join(name).join("manifest.txt"), manifest_text(&meta, &cfg))?;
                    rows.extend(p.row);
                }
                Err(e) => {
                    let _ = writeln!(failures, "{ablation},{},{}", group.display(), e.to_string().replace('\n', " "));
                    first_err.get_or_insert(e);
                }
            }
        }
        let report = EvalReport { rows };
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("report.csv"), report.to_csv())?;
        table.push_str(&table_row(ablation, &report));
        print!("{}", if settings.len() > 1 { format!("# {ablation}\n{}", report.to_csv()) } else { report.to_csv() });
    }
    if settings.len() > 1 {
        fs::write(a.out.join("ablation.csv"), &table)?;
        print!("{table}");
    }
    if !failures.is_empty() {
        fs::write(a.out.join("failures.csv"), format!("ablation,group,error\n{failures}"))?;
    }
    let meta = vec![
        ("command", "bench".to_string()),
        ("groups", a.groups.display().to_string()),
        ("ablate", a.ablate.clone()),
        ("seed", resolved.config.seed.to_string()),
        ("precision", precision_name(resolved.precision).to_string()),
        ("jobs", jobs.to_string()),
        ("started_unix", format!("{started:.3}")),
        ("finished_unix", format!("{:.3}", unix_now())),
    ];
    fs::write(a.out.join("manifest.txt"), manifest_text(&meta, &resolved.config))?;
    match (ok, first_err) {
        (0, Some(e)) => Err(e),
        _ => Ok(()),
    }
}
