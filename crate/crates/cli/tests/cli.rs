use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chromaholo::dataset::generate_procedural_target;
use chromaholo::imageio::{save_depth_png, save_target_png};
use chromaholo::optics::raw;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_chromaholo"));
    cmd.env_remove("HOLO_SEED").env("RUST_LOG", "warn");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn chromaholo")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn target_png(dir: &Path, seed: u64, size: usize) -> (PathBuf, PathBuf) {
    let (image, depth) = generate_procedural_target(seed, size, size).unwrap();
    let t = dir.join(format!("target{seed}.png"));
    let d = dir.join(format!("depth{seed}.png"));
    save_target_png(&t, &image).unwrap();
    save_depth_png(&d, &depth).unwrap();
    (t, d)
}

fn small_corpus(dir: &Path, count: &str) -> PathBuf {
    let out = dir.join("corpus");
    let o = run(&["dataset-gen", "--count", count, "--resolution", "32", "--steps", "20", "--seed", "7", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
    assert_eq!(code(&run(&["bogus"])), 64);
}

#[test]
fn dataset_gen_writes_records_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = run(&["dataset-gen", "--count", "2", "--resolution", "64", "--steps", "50", "--seed", "7", "--out", p(out)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for id in ["rec_00000", "rec_00001"] {
        let pa = fs::read(a.join(id).join("powers.json")).unwrap();
        let pb = fs::read(b.join(id).join("powers.json")).unwrap();
        assert_eq!(pa, pb);
    }
    assert!(!a.join("rec_00002").exists());
    assert!(a.join("run_config.json").exists());
    assert_eq!(fs::read(a.join("manifest.json")).unwrap(), fs::read(b.join("manifest.json")).unwrap());
}

#[test]
fn dataset_gen_without_out_is_a_usage_error() {
    let o = run(&["dataset-gen", "--count", "1"]);
    assert_eq!(code(&o), 64);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--out"));
}

#[test]
fn config_file_is_overridden_by_flags_and_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let (t, _) = target_png(dir.path(), 3, 32);
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"optim.steps": 7, "optim.scale": 1.5}"#).unwrap();
    let out = dir.path().join("o");
    let o = run(&["optimize", p(&t), "--config", p(&cfg), "--steps", "5", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let echo: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("run_config.json")).unwrap()).unwrap();
    assert_eq!(echo["optim.steps"], 5);
    assert_eq!(echo["optim.scale"], 1.5);
    let history: Vec<f64> = serde_json::from_str(&fs::read_to_string(out.join("history.json")).unwrap()).unwrap();
    assert_eq!(history.len(), 5);

    // Rerunning from the echo alone reproduces the outputs.
    let again = dir.path().join("again");
    let o = run(&["optimize", "--config", p(&out.join("run_config.json")), "--out", p(&again)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["powers.json", "history.json", "phases.f32"] {
        assert_eq!(fs::read(out.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"optim.stepz": 7}"#).unwrap();
    let o = run(&["dataset-gen", "--config", p(&cfg), "--out", p(&dir.path().join("o"))]);
    assert_eq!(code(&o), 64);
}

#[test]
fn holo_seed_overrides_the_file_but_not_flags() {
    let dir = tempfile::tempdir().unwrap();
    let (t, _) = target_png(dir.path(), 4, 32);
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"optim.seed": 1}"#).unwrap();
    let seed_of = |out: &Path| -> u64 {
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("run_config.json")).unwrap()).unwrap();
        v["optim.seed"].as_u64().unwrap()
    };
    let a = dir.path().join("a");
    let o = bin().env("HOLO_SEED", "42").args(["optimize", p(&t), "--steps", "2", "--config", p(&cfg), "--out", p(&a)]).output().unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(seed_of(&a), 42);
    let b = dir.path().join("b");
    let o = bin().env("HOLO_SEED", "42").args(["optimize", p(&t), "--steps", "2", "--seed", "9", "--out", p(&b)]).output().unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(seed_of(&b), 9);
    let o = bin().env("HOLO_SEED", "x").args(["optimize", p(&t), "--out", p(&b)]).output().unwrap();
    assert_eq!(code(&o), 64);
}

#[test]
fn optimize_writes_outputs_and_grating() {
    let dir = tempfile::tempdir().unwrap();
    let (t, d) = target_png(dir.path(), 5, 64);
    let out = dir.path().join("o");
    let o = run(&["optimize", p(&t), "--depth", p(&d), "--steps", "100", "--export-grating", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let history: Vec<f64> = serde_json::from_str(&fs::read_to_string(out.join("history.json")).unwrap()).unwrap();
    assert_eq!(history.len(), 100);
    for f in ["powers.json", "init.json", "reconstruction.png", "reconstruction_plane0.png", "reconstruction_plane2.png"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let (plain, _) = raw::load_phases(&out.join("phases.f32")).unwrap();
    let (grated, _) = raw::load_phases(&out.join("phases_grating.f32")).unwrap();
    let pi = std::f32::consts::PI;
    for (((_, y, _), &a), &b) in plain.indexed_iter().zip(grated.iter()) {
        if y % 2 == 1 {
            assert_eq!(b, a + pi);
        } else {
            assert_eq!(b, a);
        }
    }
}

#[test]
fn optimize_reports_unreadable_target() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    assert_eq!(code(&run(&["optimize", p(&dir.path().join("nope.png")), "--out", p(&out)])), 66);
    let junk = dir.path().join("junk.png");
    fs::write(&junk, b"not a png").unwrap();
    assert_eq!(code(&run(&["optimize", p(&junk), "--out", p(&out)])), 66);
}

#[test]
fn train_checkpoints_resumes_and_feeds_warm_start() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path(), "10");

    assert_eq!(code(&run(&["train", "--corpus", p(&corpus), "--epochs", "0", "--out", p(&dir.path().join("z"))])), 64);

    let first = dir.path().join("t1");
    let o = run(&["train", "--corpus", p(&corpus), "--epochs", "3", "--out", p(&first)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(first.join("checkpoint").join("checkpoint.json").exists());
    let log: Vec<serde_json::Value> = serde_json::from_str(&fs::read_to_string(first.join("training_log.json")).unwrap()).unwrap();
    assert_eq!(log.len(), 3);
    assert!(String::from_utf8_lossy(&o.stdout).contains("final train loss"));

    let second = dir.path().join("t2");
    let o = run(&["train", "--corpus", p(&corpus), "--epochs", "5", "--resume", p(&first), "--out", p(&second)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let log: Vec<serde_json::Value> = serde_json::from_str(&fs::read_to_string(second.join("training_log.json")).unwrap()).unwrap();
    assert_eq!(log.iter().map(|e| e["epoch"].as_u64().unwrap()).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);

    // Warm and cold arms share the phase initialization but not the starting powers.
    let (t, d) = target_png(dir.path(), 11, 32);
    let cold = dir.path().join("cold");
    let warm = dir.path().join("warm");
    assert_eq!(code(&run(&["optimize", p(&t), "--depth", p(&d), "--steps", "3", "--out", p(&cold)])), 0);
    let o = run(&["optimize", p(&t), "--depth", p(&d), "--steps", "3", "--warm-start", p(&second), "--out", p(&warm)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let init = |dir: &Path| -> serde_json::Value { serde_json::from_str(&fs::read_to_string(dir.join("init.json")).unwrap()).unwrap() };
    assert_eq!(init(&cold)["initial_phase_hash"], init(&warm)["initial_phase_hash"]);
    assert_ne!(init(&cold)["initial_powers"], init(&warm)["initial_powers"]);

    let est = dir.path().join("est");
    let o = run(&["estimate", "--model", p(&second.join("checkpoint")), p(&t), "--out", p(&est)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(est.join("powers.json").exists());
}

#[test]
fn train_on_empty_corpus_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("empty");
    fs::create_dir_all(&corpus).unwrap();
    fs::write(corpus.join("manifest.json"), r#"{"records": [], "config_hash": "", "spec": null}"#).unwrap();
    let o = run(&["train", "--corpus", p(&corpus), "--epochs", "1", "--out", p(&dir.path().join("t"))]);
    assert_eq!(code(&o), 65, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn eval_reports_one_row_per_target() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path(), "4");
    let model = dir.path().join("m");
    assert_eq!(code(&run(&["train", "--corpus", p(&corpus), "--epochs", "1", "--out", p(&model)])), 0);

    let out = dir.path().join("eval");
    let o = run(&[
        "eval", "--model", p(&model), "--procedural", "3", "--resolution", "32", "--steps", "12", "--checkpoints", "5,12", "--out", p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].contains("cold@5") && lines[0].contains("warm@12"));
    assert!(out.join("report.json").exists());

    let o = run(&["eval", "--model", p(&dir.path().join("missing")), "--procedural", "1", "--out", p(&out)]);
    assert_eq!(code(&o), 66);
}

#[test]
fn render_writes_pngs_for_stored_phases() {
    let dir = tempfile::tempdir().unwrap();
    let (t, _) = target_png(dir.path(), 6, 32);
    let out = dir.path().join("o");
    assert_eq!(code(&run(&["optimize", p(&t), "--steps", "2", "--out", p(&out)])), 0);
    let png = dir.path().join("png");
    let o = run(&["render", p(&out.join("phases.f32")), "--out", p(&png)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(png.join("phases.png").exists());
}
