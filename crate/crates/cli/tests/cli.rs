use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use robself::data::{load_image, warp_homography, Homography};

const FIXTURES: [&str; 3] = ["astronaut", "coffee", "hubble"];

fn robself(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_robself")).args(args).output().expect("spawn robself")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn fixture_dir(root: &Path) -> PathBuf {
    let dir = root.join("in");
    fs::create_dir_all(&dir).unwrap();
    for name in FIXTURES {
        let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(format!("{name}.png"));
        fs::copy(src, dir.join(format!("{name}.png"))).unwrap();
    }
    dir
}

fn synth(root: &Path, out: &str, extra: &[&str]) -> PathBuf {
    let input = fixture_dir(root);
    let out = root.join(out);
    let mut args = vec!["synth", "--input", input.to_str().unwrap(), "--out", out.to_str().unwrap(), "--luminance"];
    args.extend_from_slice(&["--crop", "32", "--factor", "2", "--trans", "3", "--rot", "2", "--persp", "0"]);
    args.extend_from_slice(extra);
    let o = robself(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out
}

const QUICK: [&str; 8] = ["--channels", "4", "--iters", "20", "--level-i", "2", "--precision", "f64"];

fn run(pair: &Path, out: &Path, preset: &str, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--preset", preset, "--pair", pair.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(&QUICK);
    args.extend_from_slice(extra);
    robself(&args)
}

#[test]
fn run_writes_every_output() {
    let tmp = tempfile::tempdir().unwrap();
    let groups = synth(tmp.path(), "groups", &["--modality", "depth"]);
    let out = tmp.path().join("out");
    let o = run(&groups.join("astronaut"), &out, "real-depth-x2", &["--seed", "7"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["sr.tfm", "trans.tfm", "aligned_guide.png", "importance.png", "trace.csv", "manifest.txt", "metrics.csv"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("run.seed = 7") && manifest.contains("seed = 7\n"));
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 21);
}

#[test]
fn run_twice_is_bitwise_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let groups = synth(tmp.path(), "groups", &[]);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        assert_eq!(code(&run(&groups.join("coffee"), out, "real-nir-x2", &["--seed", "3"])), 0);
    }
    assert_eq!(fs::read(a.join("sr.tfm")).unwrap(), fs::read(b.join("sr.tfm")).unwrap());
    let replay = tmp.path().join("replay");
    let o = robself(&["run", "--config", a.join("manifest.txt").to_str().unwrap(), "--out", replay.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(a.join("sr.tfm")).unwrap(), fs::read(replay.join("sr.tfm")).unwrap());
}

#[test]
fn contract_and_usage_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let groups = synth(tmp.path(), "groups", &["--modality", "depth"]);
    let pair = groups.join("hubble");
    assert_eq!(code(&run(&pair, &tmp.path().join("nir"), "real-nir-x2", &[])), 3);
    assert_eq!(code(&run(&pair, &tmp.path().join("bad"), "no-such-preset", &[])), 2);
    assert_eq!(code(&robself(&["run", "--preset", "real-depth-x2", "--out", "x"])), 2);

    let out = tmp.path().join("once");
    assert_eq!(code(&run(&pair, &out, "real-depth-x2", &[])), 0);
    assert_eq!(code(&run(&pair, &out, "real-depth-x2", &[])), 2);
    assert_eq!(code(&run(&pair, &out, "real-depth-x2", &["--force"])), 0);
}

#[test]
fn divergence_exits_four() {
    let tmp = tempfile::tempdir().unwrap();
    let groups = synth(tmp.path(), "groups", &[]);
    let cfg = tmp.path().join("hot.txt");
    fs::write(&cfg, "preset = real-nir-x2\nlr_init = 1e150\n").unwrap();
    let out = tmp.path().join("out");
    let o = robself(&[
        "run", "--config", cfg.to_str().unwrap(), "--pair", groups.join("astronaut").to_str().unwrap(),
        "--out", out.to_str().unwrap(), "--channels", "4", "--iters", "50", "--level-i", "2",
    ]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn bench_reports_rows_in_input_order() {
    let tmp = tempfile::tempdir().unwrap();
    let groups = synth(tmp.path(), "groups", &[]);
    let out = tmp.path().join("bench");
    let mut args = vec!["bench", "--preset", "real-nir-x2", "--groups", groups.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(&QUICK);
    args.extend_from_slice(&["--jobs", "3"]);
    let o = robself(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "pair,rmse,psnr,pixels");
    let names: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["astronaut", "coffee", "hubble", "mean"]);
    let rmse: Vec<f64> = lines[1..].iter().map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!((rmse[3] - (rmse[0] + rmse[1] + rmse[2]) / 3.0).abs() < 1e-12);
    for name in FIXTURES {
        assert!(out.join(name).join("manifest.txt").is_file());
    }
}

#[test]
fn bench_ablation_table_has_four_settings() {
    let tmp = tempfile::tempdir().unwrap();
    let groups = synth(tmp.path(), "groups", &[]);
    let out = tmp.path().join("table");
    let mut args = vec!["bench", "--preset", "real-nir-x2", "--groups", groups.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(&["--channels", "4", "--iters", "3", "--level-i", "2", "--ablate", "table"]);
    assert_eq!(code(&robself(&args)), 0);
    let table = fs::read_to_string(out.join("ablation.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("ablation,translator,filter,rmse,psnr"));
    let rows: Vec<String> = lines.map(|l| l.split(',').take(3).collect::<Vec<_>>().join(",")).collect();
    assert_eq!(rows, ["no-both,no,no", "no-filter,yes,no", "no-translator,no,yes", "none,yes,yes"]);
}

#[test]
fn bench_fails_only_when_every_pair_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let groups = synth(tmp.path(), "groups", &["--modality", "depth"]);
    let out = tmp.path().join("bench");
    let o = robself(&["bench", "--preset", "real-nir-x2", "--groups", groups.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert_eq!(fs::read_to_string(out.join("failures.csv")).unwrap().lines().count(), 4);

    fs::write(groups.join("coffee").join("meta.txt"), "value_scale = 1\nmodality = nir\n").unwrap();
    let out = tmp.path().join("mixed");
    let mut args = vec!["bench", "--preset", "real-nir-x2", "--groups", groups.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(&QUICK);
    assert_eq!(code(&robself(&args)), 0);
    assert_eq!(fs::read_to_string(out.join("report.csv")).unwrap().lines().count(), 3);
}

#[test]
fn synth_is_reproducible_and_replayable() {
    let tmp = tempfile::tempdir().unwrap();
    let a = synth(tmp.path(), "a", &["--seed", "1"]);
    let b = synth(tmp.path(), "b", &["--seed", "1"]);
    for name in FIXTURES {
        for f in ["source_lr.tfm", "guide_x2.tfm", "gt_x2.tfm", "homography.txt"] {
            assert_eq!(fs::read(a.join(name).join(f)).unwrap(), fs::read(b.join(name).join(f)).unwrap(), "{name}/{f}");
        }
    }
    let color = load_image::<f64>(&tmp.path().join("in/astronaut.png")).unwrap().tensor;
    let color = robself::tensor::center_crop(&color, 32, 32).unwrap();
    let h = Homography::parse(&fs::read_to_string(a.join("astronaut/homography.txt")).unwrap()).unwrap();
    let replay = warp_homography(&color, &h).unwrap();
    let stored = load_image::<f64>(&a.join("astronaut/guide_x2.tfm")).unwrap().tensor;
    assert_eq!(replay.data(), stored.data());
}

#[test]
fn synth_without_misalignment_keeps_the_guide() {
    let tmp = tempfile::tempdir().unwrap();
    let input = fixture_dir(tmp.path());
    let out = tmp.path().join("still");
    let o = robself(&[
        "synth", "--input", input.to_str().unwrap(), "--out", out.to_str().unwrap(), "--luminance",
        "--crop", "32", "--factor", "2", "--trans", "0", "--rot", "0", "--persp", "0",
    ]);
    assert_eq!(code(&o), 0);
    let color = load_image::<f64>(&input.join("coffee.png")).unwrap().tensor;
    let color = robself::tensor::center_crop(&color, 32, 32).unwrap();
    let stored = load_image::<f64>(&out.join("coffee/guide_x2.tfm")).unwrap().tensor;
    assert_eq!(stored.data(), color.data());
    let missing = robself(&["synth", "--input", "/nonexistent", "--out", tmp.path().join("x").to_str().unwrap()]);
    assert_eq!(code(&missing), 3);
}

#[test]
fn gradcheck_exit_codes() {
    let o = robself(&["gradcheck", "--op", "grid_sample"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.lines().filter(|l| l.ends_with("PASS")).count() >= 1);
    assert!(text.lines().all(|l| !l.contains("conv2d")));
    assert_eq!(code(&robself(&["gradcheck", "--op", "resize", "--tolerance", "1e-12"])), 1);
    assert_eq!(code(&robself(&["gradcheck", "--op", "nope"])), 2);
}

#[test]
fn config_dump_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let o = robself(&["config", "--dump-preset", "syn-depth-x8"]);
    assert_eq!(code(&o), 0);
    let path = tmp.path().join("c.txt");
    fs::write(&path, &o.stdout).unwrap();
    let checked = robself(&["config", "--check", path.to_str().unwrap()]);
    assert_eq!(code(&checked), 0);
    assert!(String::from_utf8_lossy(&checked.stdout).contains("sr_factor = 8"));
    let list = robself(&["config", "--list"]);
    assert_eq!(String::from_utf8_lossy(&list.stdout).lines().count(), 6);
    fs::write(&path, "kernel_m = banana\n").unwrap();
    assert_eq!(code(&robself(&["config", "--check", path.to_str().unwrap()])), 2);
}
