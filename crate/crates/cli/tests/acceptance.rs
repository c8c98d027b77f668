//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robself::data::{
    degrade, load_image, luminance, make_synthetic_pair, random_homography, warp_homography, Homography, ImagePair,
    MisalignSpec,
};
use robself::diffengine::{GradCheckOptions, Graph, KernelMap};
use robself::metrics::rmse;
use robself::model::{align_guide, extract_features, Ablation, DeformationField, ModelState, RobSelfConfig, Variant};
use robself::optimize::{consistency_loss, lr_at, optimize_pair};
use robself::suite::run_suite;
use robself::tensor::{bilinear_resize, center_crop};
use robself::Tensor;

const SUITE: [&str; 5] = ["astronaut", "coffee", "immunohistochemistry", "hubble", "motorcycle"];

struct Verdict {
    id: usize,
    pass: bool,
    /// Reported but not allowed to fail the run.
    soft: bool,
}

fn report(id: usize, title: &str, pass: bool, detail: String) -> Verdict {
    println!("{} criterion {id} {title}: {detail}", if pass { "PASS" } else { "FAIL" });
    Verdict { id, pass, soft: false }
}

fn random(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

fn fixture(name: &str) -> Tensor<f32> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(format!("{name}.png"));
    load_image::<f32>(path).unwrap().tensor
}

fn gradient_suite() -> Verdict {
    let start = Instant::now();
    let cases = run_suite(&GradCheckOptions::default(), None).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let worst = cases.iter().map(|c| c.report.max_error()).fold(0.0, f64::max);
    let failed: Vec<&str> = cases.iter().filter(|c| !c.report.passed()).map(|c| c.label.as_str()).collect();
    let models = cases.iter().filter(|c| c.op == "model").count();
    let pass = failed.is_empty() && secs < 300.0 && models == 12;
    report(1, "gradient suite", pass, format!("{} cases ({models} whole-model), worst rel error {worst:.2e}, {secs:.1}s, failed {failed:?}", cases.len()))
}

fn bilinear(plane: &[f64], h: usize, w: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let at = |yy: usize, xx: usize| plane[yy * w + xx];
    (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1.0 - fx) * at(y1, x0) + fx * at(y1, x1))
}

fn filter_oracle(src: &Tensor<f64>, refr: &Tensor<f64>, side: usize) -> Tensor<f64> {
    let (c, h, w) = src.dims3().unwrap();
    let r = (side / 2) as isize;
    Tensor::from_fn3(c, h, w, |ci, y, x| {
        let mut logits = Vec::new();
        let mut nbrs = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                logits.push((0..c).map(|k| src.at3(k, yy, xx) * refr.at3(k, y, x)).sum::<f64>());
                nbrs.push((yy, xx));
            }
        }
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        logits.iter().zip(&nbrs).map(|(l, &(yy, xx))| l.exp() / z * src.at3(ci, yy, xx)).sum()
    })
}

fn deform_oracle(x: &Tensor<f64>, w: &Tensor<f64>, off: &Tensor<f64>) -> Tensor<f64> {
    let (c, h, wd) = x.dims3().unwrap();
    Tensor::from_fn3(c, h, wd, |co, y, px| {
        let mut acc = 0.0;
        for ci in 0..c {
            for t in 0..9 {
                let (kx, ky) = ((t % 3) as f64 - 1.0, (t / 3) as f64 - 1.0);
                let sx = px as f64 + kx + off.at3(2 * t, y, px);
                let sy = y as f64 + ky + off.at3(2 * t + 1, y, px);
                acc += w.data()[(co * c + ci) * 9 + t] * bilinear(x.channel(ci), h, wd, sx, sy);
            }
        }
        acc
    })
}

fn oracle_equivalence() -> Verdict {
    let mut worst: f64 = 0.0;
    for (n, seed) in [(5usize, 1u64), (7, 2)] {
        let src = random(&[1, n, n], seed, -1.0, 1.0);
        let refr = random(&[1, n, n], seed + 10, -2.0, 2.0);
        for side in [3usize, 5, 7].into_iter().filter(|&s| s <= n) {
            let mut g = Graph::<f64>::new();
            let (s, r) = (g.constant(src.clone()), g.constant(refr.clone()));
            let y = g.reference_filter(s, r, KernelMap::uniform(n, n, side as u16).unwrap()).unwrap();
            worst = worst.max(g.value(y).max_abs_diff(&filter_oracle(&src, &refr, side)).unwrap());
        }
        let wt = random(&[1, 1, 3, 3], seed + 20, -1.0, 1.0);
        let off = random(&[18, n, n], seed + 30, -2.5, 2.5);
        let mut g = Graph::<f64>::new();
        let (xv, wv, ov) = (g.constant(src.clone()), g.constant(wt.clone()), g.constant(off.clone()));
        let d = g.deform_conv2d(xv, wv, ov).unwrap();
        worst = worst.max(g.value(d).max_abs_diff(&deform_oracle(&src, &wt, &off)).unwrap());
    }
    report(2, "oracle equivalence", worst < 1e-12, format!("max abs deviation {worst:.2e} on 5x5 and 7x7 fixtures"))
}

fn identity_degeneracies() -> Verdict {
    let mut checks = Vec::new();
    for variant in [Variant::Re, Variant::De] {
        let cfg = RobSelfConfig { channels: 4, level_i: 2, sr_factor: 2, variant, seed: 5, ..RobSelfConfig::default() };
        let state = ModelState::<f64>::new(cfg.clone()).unwrap();
        let mut g = Graph::new();
        let (_, fg) = extract_features(&mut g, &state, &random(&[cfg.phi, 12, 12], 1, 0.0, 1.0), &random(&[cfg.psi, 12, 12], 2, 0.0, 1.0)).unwrap();
        let dim = cfg.field_dim();
        let off = g.constant(Tensor::zeros(vec![dim, 12, 12]));
        let out = align_guide(&mut g, &state, fg, DeformationField { offsets: off, dim }).unwrap();
        let expect = match variant {
            Variant::Re => g.value(fg).clone(),
            Variant::De => {
                let w = g.param(state.params(), "translator.deform.weight").unwrap();
                let c = g.conv2d(fg, w, None, 1, 1).unwrap();
                g.value(c).clone()
            }
        };
        checks.push((format!("{variant:?} zero field"), g.value(out) == &expect));
    }
    let zero = MisalignSpec { translation: 0.0, rotation: 0.0, perspective: 0.0, seed: 9 };
    let h = random_homography(&zero, 32, 32).unwrap();
    let img = random(&[3, 32, 32], 3, 0.0, 1.0);
    checks.push(("zero misalignment".into(), h == Homography::IDENTITY && warp_homography(&img, &h).unwrap() == img));
    let mut g = Graph::<f64>::new();
    let x = g.constant(img.clone());
    let y = g.resize(x, 32, 32).unwrap();
    checks.push(("identity resize".into(), g.value(y) == &img && bilinear_resize(&img, 32, 32).unwrap() == img));
    let failed: Vec<&String> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| n).collect();
    report(3, "identity degeneracies", failed.is_empty(), format!("{} exact checks, failed {failed:?}", checks.len()))
}

fn suite_config(ablation: Ablation) -> RobSelfConfig {
    RobSelfConfig { channels: 8, iterations: 1000, ablation, ..RobSelfConfig::preset("real-nir-x2").unwrap() }
}

fn suite_pair(name: &str) -> ImagePair<f32> {
    let rgb = fixture(name);
    let spec = MisalignSpec { translation: 6.0, rotation: 3.0, perspective: 0.0, seed: 1 };
    make_synthetic_pair(&luminance(&rgb).unwrap(), &rgb, &spec, 2).unwrap()
}

/// RMSE on the 0-255 scale of every suite pair under one ablation setting.
fn suite_rmse(ablation: Ablation) -> (Vec<f64>, f64) {
    let start = Instant::now();
    let cfg = suite_config(ablation);
    let errs = SUITE
        .iter()
        .map(|name| {
            let pair = suite_pair(name);
            let out = optimize_pair(&pair, &cfg).unwrap();
            rmse(&out.sr, pair.gt_hr.as_ref().unwrap(), 255.0).unwrap()
        })
        .collect();
    (errs, start.elapsed().as_secs_f64())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn synthetic_improvement(full: &[f64], secs: f64) -> Verdict {
    let mut parts = Vec::new();
    let mut pass = secs < 1800.0;
    for (name, &m) in SUITE.iter().zip(full) {
        let pair = suite_pair(name);
        let (_, h, w) = pair.guide_hr.dims3().unwrap();
        let base = rmse(&bilinear_resize(&pair.source_lr, h, w).unwrap(), pair.gt_hr.as_ref().unwrap(), 255.0).unwrap();
        let gain = 1.0 - m / base;
        pass &= gain >= 0.10;
        parts.push(format!("{name} {base:.3}->{m:.3} ({:.1}%)", 100.0 * gain));
    }
    report(4, "synthetic improvement over bilinear", pass, format!("{}; {secs:.0}s", parts.join(", ")))
}

fn ablation_ordering(full: &[f64]) -> Verdict {
    let filter_only = mean(&suite_rmse(Ablation::NoTranslator).0);
    let translator_only = mean(&suite_rmse(Ablation::NoFilter).0);
    let neither = mean(&suite_rmse(Ablation::NoBoth).0);
    let full = mean(full);
    let ordered = [
        ("full < filter-only", full < filter_only),
        ("full < translator-only", full < translator_only),
        ("filter-only < neither", filter_only < neither),
        ("translator-only < neither", translator_only < neither),
    ];
    let broken: Vec<&str> = ordered.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    report(
        5,
        "ablation ordering",
        broken.is_empty(),
        format!("mean rmse full {full:.3}, filter-only {filter_only:.3}, translator-only {translator_only:.3}, neither {neither:.3}; violated {broken:?}"),
    )
}

fn alignment_efficacy() -> Verdict {
    let rgb = center_crop(&fixture("astronaut"), 64, 64).unwrap();
    let src = luminance(&rgb).unwrap();
    let mut hits = 0;
    let mut parts = Vec::new();
    for seed in 0..5u64 {
        let angle = (seed as f64 * 72.0 + 17.0).to_radians();
        let (tx, ty) = (4.0 * angle.cos(), 4.0 * angle.sin());
        let guide = warp_homography(&rgb, &Homography::translation(tx, ty)).unwrap();
        let pair = ImagePair::new(degrade(&src, 2).unwrap(), guide, Some(src.clone()), 2, "shift").unwrap();
        let cfg = RobSelfConfig { seed, ..suite_config(Ablation::None) };
        let out = optimize_pair(&pair, &cfg).unwrap();
        let field = out.diagnostics.field.expect("resampling variant keeps its field");
        let avg = |c: usize| field.channel(c).iter().map(|&v| v as f64).sum::<f64>() / (64.0 * 64.0);
        let (dx, dy) = (avg(0), avg(1));
        let err = ((dx - tx).powi(2) + (dy - ty).powi(2)).sqrt();
        if err <= 1.5 {
            hits += 1;
        } else {
            let dir = std::env::temp_dir().join(format!("robself-acceptance-field-{seed}.png"));
            robself::data::save_visualization(&dir, &field).unwrap();
            parts.push(format!("field written to {}", dir.display()));
        }
        parts.push(format!("seed {seed} true ({tx:.2},{ty:.2}) mean ({dx:.2},{dy:.2}) err {err:.2}"));
    }
    let mut v = report(6, "alignment efficacy", hits >= 4, format!("{hits}/5 within 1.5 px; {}", parts.join(", ")));
    v.soft = true;
    v
}

fn schedule_and_loss() -> Verdict {
    let lr_ok = (lr_at(1000, 0.002, 0.9998, 5) - 0.002 * 0.9998f64.powi(200)).abs() < 1e-12;
    let lr = random(&[1, 4, 4], 7, 0.0, 1.0);
    let (a, b) = (random(&[1, 8, 8], 8, -1.0, 2.0), random(&[1, 8, 8], 9, -1.0, 2.0));
    let loss = |x: &Tensor<f64>, y: &Tensor<f64>, lr: &Tensor<f64>| {
        let mut g = Graph::<f64>::new();
        let (xv, yv) = (g.constant(x.clone()), g.constant(y.clone()));
        let l = consistency_loss(&mut g, xv, Some(yv), lr, 2, 1.0).unwrap();
        g.value(l.total).data()[0]
    };
    let symmetric = loss(&a, &b, &lr) == loss(&b, &a, &lr);
    let exact = degrade(&a, 2).unwrap();
    let zero = loss(&a, &a, &exact) == 0.0;
    report(7, "schedule and loss arithmetic", lr_ok && symmetric && zero, format!("lr_at(1000) {lr_ok}, symmetry {symmetric}, zero on pooled-exact {zero}"))
}

fn strip_ms(trace: &str) -> String {
    trace.lines().map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head)).collect::<Vec<_>>().join("\n")
}

fn determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let groups = tmp.path().join("groups");
    let input = tmp.path().join("in");
    fs::create_dir_all(&input).unwrap();
    fs::copy(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/coffee.png"), input.join("coffee.png")).unwrap();
    let bin = env!("CARGO_BIN_EXE_robself");
    let status = Command::new(bin)
        .args(["synth", "--luminance", "--crop", "64", "--factor", "2", "--seed", "4", "--input"])
        .arg(&input)
        .arg("--out")
        .arg(&groups)
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    let runs: Vec<_> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = tmp.path().join(name);
            let o = Command::new(bin)
                .args(["run", "--preset", "real-nir-x2", "--channels", "8", "--iters", "200", "--seed", "7", "--pair"])
                .arg(groups.join("coffee"))
                .arg("--out")
                .arg(&out)
                .output()
                .unwrap();
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
            (fs::read(out.join("sr.tfm")).unwrap(), strip_ms(&fs::read_to_string(out.join("trace.csv")).unwrap()))
        })
        .collect();
    let sr = runs[0].0 == runs[1].0;
    let trace = runs[0].1 == runs[1].1;
    report(8, "determinism", sr && trace, format!("sr bitwise equal {sr}, trace equal excluding wall time {trace}"))
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut verdicts = vec![gradient_suite(), oracle_equivalence(), identity_degeneracies()];
    let (full, secs) = suite_rmse(Ablation::None);
    verdicts.push(synthetic_improvement(&full, secs));
    let mut ordering = ablation_ordering(&full);
    ordering.soft = true;
    verdicts.push(ordering);
    verdicts.push(alignment_efficacy());
    verdicts.push(schedule_and_loss());
    verdicts.push(determinism());
    let passed = verdicts.iter().filter(|v| v.pass).count();
    println!("acceptance: {passed}/{} criteria pass", verdicts.len());
    let hard: Vec<usize> = verdicts.iter().filter(|v| !v.pass && !v.soft).map(|v| v.id).collect();
    if !hard.is_empty() {
        eprintln!("hard criteria failed: {hard:?}");
        std::process::exit(1);
    }
}
