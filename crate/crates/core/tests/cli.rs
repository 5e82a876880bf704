use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

use refmot::config::Settings;
use refmot::evalio::{evaluate, read_dataset, read_mot};
use refmot::refsearch::{load_checkpoint, RsConfig};
use refmot::train::{build_pairs, init_classifier, Model};

const BIN: &str = env!("CARGO_BIN_EXE_refmot");

/// Small settings so training and tracking stay fast.
const SMALL: &[&str] = &[
    "--set", "synth.frames=20",
    "--set", "rs.d_model=8",
    "--set", "rs.head_hidden=8",
    "--set", "rs.layers=1",
    "--set", "rs.heads=2",
    "--set", "rs.points=3",
    "--set", "rs.patch_sizes=1,2,4",
];

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["--out", p(dir)];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    args.push("synth");
    run(&args)
}

fn read_all(dir: &Path) -> Vec<u8> {
    let mut out = Vec::new();
    for name in ["gt.txt", "det.txt", "emb.txt", "meta.txt", "frames/000001.bin"] {
        out.extend(std::fs::read(dir.join(name)).unwrap());
    }
    out
}

#[test]
fn synth_is_deterministic_and_seeded() {
    let t = tempfile::tempdir().unwrap();
    let (a, b, c) = (t.path().join("a"), t.path().join("b"), t.path().join("c"));
    assert_eq!(code(&synth(&a, &[])), 0);
    assert_eq!(code(&synth(&b, &[])), 0);
    assert_eq!(code(&synth(&c, &["--seed", "9"])), 0);
    assert_eq!(read_all(&a), read_all(&b));
    assert_ne!(read_all(&a), read_all(&c));
}

#[test]
fn invalid_settings_exit_2() {
    let t = tempfile::tempdir().unwrap();
    let o = synth(t.path(), &["--set", "synth.fp_rate=1.5"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("fp_rate"));
    assert_eq!(code(&run(&["--set", "no.such.key=1", "settings"])), 2);
    assert_eq!(code(&run(&["--config", "/nonexistent/settings.txt", "settings"])), 2);
    assert_eq!(code(&run(&["frobnicate"])), 2);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn settings_file_round_trips() {
    let t = tempfile::tempdir().unwrap();
    let o = run(&["--set", "tracker.rs_gate=0.7", "settings"]);
    let text = stdout(&o);
    let file = t.path().join("s.txt");
    std::fs::write(&file, &text).unwrap();
    let again = run(&["--config", p(&file), "settings"]);
    assert_eq!(stdout(&again), text);
    assert!(text.contains("tracker.rs_gate = 0.7"));
}

#[test]
fn zero_step_checkpoint_equals_initialization() {
    let t = tempfile::tempdir().unwrap();
    let seq = t.path().join("seq");
    let model = t.path().join("model");
    assert_eq!(code(&synth(&seq, &[])), 0);
    let mut args = vec!["--out", p(&model), "--set", "train.steps=0", "--seed", "5"];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(&["train", "--dataset", p(&seq)]);
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(model.join("train_log.txt")).unwrap(), "");

    let mut s = Settings::default();
    for kv in SMALL.iter().skip(1).step_by(2) {
        s.set_assignment(kv).unwrap();
    }
    let ds = read_dataset(&seq, true).unwrap();
    let pairs = build_pairs(std::slice::from_ref(&ds), s.rs.emb_dim, &s.train).unwrap();
    let cfg = RsConfig {
        num_identities: pairs.prototypes.len(),
        ..s.rs.clone()
    };
    let mut want = Model::init(cfg, ds.rasters[0].shape()[2], &s.patch_sizes, 5).unwrap();
    init_classifier(&mut want.module, &pairs.prototypes, s.train.prototype_scale).unwrap();
    let (module, embedder) = load_checkpoint(&model.join("model.ckpt")).unwrap();
    assert_eq!(module, want.module);
    assert_eq!(embedder, want.embedder);
}

#[test]
fn train_rejects_bad_inputs() {
    let t = tempfile::tempdir().unwrap();
    let seq = t.path().join("seq");
    assert_eq!(code(&synth(&seq, &[])), 0);
    let out = t.path().join("m");
    // 80x64 raster, patch 3 does not divide it
    let mut args = vec!["--out", p(&out)];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(&["--set", "rs.patch_sizes=1,2,3", "train", "--dataset", p(&seq)]);
    assert_eq!(code(&run(&args)), 2);

    std::fs::remove_dir_all(seq.join("frames")).unwrap();
    let mut args = vec!["--out", p(&out)];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(&["train", "--dataset", p(&seq)]);
    assert_eq!(code(&run(&args)), 2);
    assert!(!out.join("model.ckpt").exists());
}

#[test]
fn oracle_tracking_on_clean_data_has_no_switches() {
    let t = tempfile::tempdir().unwrap();
    let seq = t.path().join("seq");
    let clean = [
        "--set", "synth.frames=60",
        "--set", "synth.fp_rate=0",
        "--set", "synth.miss_rate=0",
        "--set", "synth.det_noise_std=0",
        "--set", "synth.emb_noise=0",
    ];
    let mut args = vec!["--out", p(&seq)];
    args.extend_from_slice(&clean);
    args.push("synth");
    assert_eq!(code(&run(&args)), 0);
    let out = t.path().join("run");
    let o = run(&["--out", p(&out), "track", "--dataset", p(&seq), "--oracle"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("births"));
    let gt = read_mot(&seq.join("gt.txt")).unwrap();
    let res = read_mot(&out.join("results.txt")).unwrap();
    assert_eq!(evaluate(&gt, &res, 0.5).unwrap().ids, 0);

    let o = run(&["--out", p(&out), "eval", "--gt", p(&seq.join("gt.txt")), "--results", p(&out.join("results.txt"))]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("IDS   0"));
    let json = std::fs::read_to_string(out.join("report.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["ids"], 0);
}

#[test]
fn track_with_detection_files() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    std::fs::write(d.join("empty.txt"), "").unwrap();
    let out = d.join("o");
    let args = |det: &str, emb: &str| {
        vec![
            "--out".to_string(),
            p(&out).to_string(),
            "track".into(),
            "--det".into(),
            p(&d.join(det)).to_string(),
            "--emb".into(),
            p(&d.join(emb)).to_string(),
            "--image".into(),
            "100x100".into(),
        ]
    };
    let o = Command::new(BIN).args(args("empty.txt", "empty.txt")).output().unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read_to_string(out.join("results.txt")).unwrap(), "");

    std::fs::write(d.join("det.txt"), "1,-1,10,10,20,40,0.9,-1,-1,-1\n2,-1,10,10,20,40,0.9,-1,-1,-1\n").unwrap();
    std::fs::write(d.join("emb.txt"), "1 0 1 0\n").unwrap();
    let o = Command::new(BIN).args(args("det.txt", "emb.txt")).output().unwrap();
    assert_eq!(code(&o), 2, "one embedding row for two detections");

    std::fs::write(d.join("emb.txt"), "1 0 1 0\n3 0 1 0\n").unwrap();
    let o = Command::new(BIN).args(args("det.txt", "emb.txt")).output().unwrap();
    assert_eq!(code(&o), 2, "embedding frame does not match its detection");

    let mut bad = args("det.txt", "emb.txt");
    bad[8] = "100by100".into();
    assert_eq!(code(&Command::new(BIN).args(bad).output().unwrap()), 2);
}

#[test]
fn eval_reports_and_rejects_missing_files() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    let mut gt = String::new();
    let mut swapped = String::new();
    for f in 1..=10 {
        for (id, x) in [(1, 0), (2, 100)] {
            gt += &format!("{f},{id},{x},0,10,20,1,-1,-1,-1\n");
            let hid = if f >= 6 { 3 - id } else { id };
            swapped += &format!("{f},{hid},{x},0,10,20,1,-1,-1,-1\n");
        }
    }
    std::fs::write(d.join("gt.txt"), &gt).unwrap();
    std::fs::write(d.join("swap.txt"), &swapped).unwrap();
    let o = run(&["--out", p(d), "eval", "--gt", p(&d.join("gt.txt")), "--results", p(&d.join("gt.txt"))]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("MOTA  1.0000"));
    let o = run(&["--out", p(d), "eval", "--gt", p(&d.join("gt.txt")), "--results", p(&d.join("swap.txt"))]);
    assert!(stdout(&o).contains("IDF1  0.5000"));
    assert!(stdout(&o).contains("IDS   2"));
    let o = run(&["eval", "--gt", p(&d.join("missing.txt")), "--results", p(&d.join("gt.txt"))]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.txt"));
}

#[test]
fn gradcheck_exit_codes() {
    let o = run(&["gradcheck", "--draws", "3"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(!stdout(&o).contains("FAIL"));
    let o = run(&["gradcheck", "--draws", "2", "--corrupt"]);
    assert_eq!(code(&o), 1);
    assert!(!stdout(&o).contains("pass "));
}

#[test]
fn gradcheck_warns_on_large_dimensions() {
    let mut child = Command::new(BIN)
        .args(["gradcheck", "--d-model", "256", "--layers", "6"])
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut line).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(line.starts_with("warning:"), "{line}");
}
