use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use framescale::lm::ToyLmParams;
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_framescale"))
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().unwrap()
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn plan_values() {
    let dir = tempfile::tempdir().unwrap();
    let p = json(&run(&["--json", "plan", "600"], dir.path()));
    assert_eq!(p["gamma"], 4);
    assert_eq!(p["sampled_frames"], 640);
    assert_eq!(p["clips"], 40);
    assert_eq!(p["max_position"], 959);
    let p = json(&run(&["--json", "plan", "16"], dir.path()));
    assert_eq!((p["gamma"].as_u64(), p["sampled_frames"].as_u64(), p["clips"].as_u64()), (Some(1), Some(16), Some(1)));
    assert_eq!(json(&run(&["--json", "plan", "300"], dir.path()))["gamma"], 2);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["plan"], dir.path()).status.code(), Some(2));
    assert_eq!(run(&["plan", "--", "-3"], dir.path()).status.code(), Some(2));
    // no seed
    assert_eq!(run(&["build-bench", "--out", "b", "--length", "30"], dir.path()).status.code(), Some(2));
    let missing = run(&["eval-qa", "--model", "absent", "--bench", "absent.jsonl", "--out", "r"], dir.path());
    assert_eq!(missing.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("absent"));
    fs::write(dir.path().join("bad.json"), r#"{"encoding": {"frames_per_clip": 0}, "lm": {"d_model": 30}}"#).unwrap();
    let bad = run(&["--config", "bad.json", "plan", "10"], dir.path());
    assert_eq!(bad.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&bad.stderr);
    assert!(msg.contains("frames_per_clip") && msg.contains("d_model"), "{msg}");
}

#[test]
fn build_bench_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixtures().join("config.json");
    let cfg = cfg.to_str().unwrap();
    let a = json(&run(&["--json", "--config", cfg, "build-bench", "--out", "a", "--length", "40", "--count", "8"], dir.path()));
    let b = json(&run(&["--json", "--config", cfg, "build-bench", "--out", "b", "--length", "40", "--count", "8"], dir.path()));
    assert_eq!(a["manifest_sha256"], b["manifest_sha256"]);
    // and identical to the committed fixture bench
    assert_eq!(
        fs::read(dir.path().join("a/manifest.jsonl")).unwrap(),
        fs::read(fixtures().join("bench/manifest.jsonl")).unwrap()
    );
    for i in 0..8 {
        let name = format!("streams/{i:05}.bin");
        assert_eq!(fs::read(dir.path().join("a").join(&name)).unwrap(), fs::read(fixtures().join("bench").join(&name)).unwrap());
    }
}

#[test]
fn zero_step_training_keeps_initialisation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixtures().join("config.json");
    let manifest = fixtures().join("bench/manifest.jsonl");
    let out = run(
        &["--config", cfg.to_str().unwrap(), "train", "--bench", manifest.to_str().unwrap(), "--out", "m", "--steps", "0"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (trained, header) = ToyLmParams::load_checkpoint(&dir.path().join("m/lm.ckpt")).unwrap();
    let init = ToyLmParams::init(header.dims, framescale::rng::derive_seed(5, "lm", 0)).unwrap();
    assert_eq!(trained, init);
    assert_eq!(header.step, 0);
    assert_eq!(header.config["seed"], 5);
}

#[test]
fn eval_qa_matches_golden_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report");
    let res = run(
        &["--config", "config.json", "eval-qa", "--model", "model", "--bench", "bench/manifest.jsonl", "--out", out.to_str().unwrap()],
        &fixtures(),
    );
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    for ext in [".json", ".csv", ".records.csv"] {
        let got = fs::read_to_string(format!("{}{ext}", out.display())).unwrap();
        let want = fs::read_to_string(fixtures().join(format!("report{ext}"))).unwrap();
        assert_eq!(got, want, "report{ext} differs");
    }
}

#[test]
fn sweeps_and_captions_write_curves() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixtures();
    let model = fx.join("model");
    let bench = fx.join("bench/manifest.jsonl");
    let (m, b) = (model.to_str().unwrap(), bench.to_str().unwrap());
    let clips = run(&["sweep-clips", "--model", m, "--bench", b, "--clips", "1,2,50", "--out", "c"], dir.path());
    assert!(clips.status.success());
    assert!(String::from_utf8_lossy(&clips.stderr).contains("skipped 50 clips"));
    let csv = fs::read_to_string(dir.path().join("c.csv")).unwrap();
    assert!(csv.starts_with("clips,accuracy\n1,") && csv.ends_with("50,\n"), "{csv}");

    // 40 s videos need no interleaving under this geometry
    let ife = json(&run(&["--json", "sweep-ife", "--model", m, "--bench", b, "--out", "i"], dir.path()));
    assert_eq!(ife["points"][0]["gamma"], 1);
    assert_eq!(ife["points"][0]["ife"], ife["points"][0]["truncated"]);
    assert_eq!(run(&["sweep-ife", "--model", m, "--bench", b, "--gammas", "3", "--out", "i"], dir.path()).status.code(), Some(2));

    fs::write(
        dir.path().join("pairs.jsonl"),
        "{\"id\":\"x\",\"candidate\":\"the cat\",\"reference\":\"the cat sat\"}\n",
    )
    .unwrap();
    let cap = json(&run(&["--json", "eval-caption", "--pairs", "pairs.jsonl", "--out", "cap"], dir.path()));
    assert!((cap["rouge1"].as_f64().unwrap() - 0.8).abs() < 1e-12);
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("cap.json")).unwrap()).unwrap();
    assert!(report.get("config").is_some());
}
