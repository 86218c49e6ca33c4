//! Binary-level contract: subcommand plumbing, exit codes, artifact layout.
//! Heavy paths (training, multi-trial evaluation) are exercised by the
//! library's acceptance target; everything here stays under a minute.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_crossface"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn crossface")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn fixtures_writes_catalog_and_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fx");
    let o = run(&[
        "fixtures",
        "--out",
        out.to_str().unwrap(),
        "--image-size",
        "64",
        "--subjects",
        "4",
        "--images-per-subject",
        "1",
        "--seed",
        "11",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("manifest.json").is_file());
    assert!(out.join("config.resolved.json").is_file());
    let pngs = std::fs::read_dir(&out)
        .unwrap()
        .filter(|e| {
            e.as_ref().unwrap().path().extension().map(|x| x == "png").unwrap_or(false)
        })
        .count();
    assert_eq!(pngs, 8, "4 subjects x 1 image x 2 modalities");
}

#[test]
fn fixtures_are_deterministic_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run(&[
            "fixtures",
            "--out",
            out.to_str().unwrap(),
            "--image-size",
            "64",
            "--subjects",
            "2",
            "--images-per-subject",
            "1",
            "--seed",
            "5",
        ]);
        assert!(o.status.success());
    }
    let name = "s000_visible_R1_00.png";
    assert_eq!(
        std::fs::read(a.join(name)).unwrap(),
        std::fs::read(b.join(name)).unwrap(),
        "same seed, same bytes"
    );
}

fn make_eval_fixture(dir: &Path) {
    let o = run(&[
        "fixtures",
        "--out",
        dir.to_str().unwrap(),
        "--image-size",
        "64",
        "--subjects",
        "120",
        "--images-per-subject",
        "1",
        "--seed",
        "3",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn evaluate_raw_writes_report_and_per_trial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let fx = dir.path().join("fx");
    make_eval_fixture(&fx);
    let out = dir.path().join("run");
    let o = run(&[
        "evaluate",
        "--data",
        fx.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--mode",
        "raw",
        "--trials",
        "2",
        "--image-size",
        "64",
        "--protocol",
        "1",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("AUC"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("eval_report.json")).unwrap())
            .unwrap();
    assert_eq!(report["mode"], "raw");
    assert_eq!(report["trials"].as_array().unwrap().len(), 2);
    for trial in 0..2 {
        assert!(out.join(format!("eval/trial{trial}_scores.csv")).is_file());
        assert!(out.join(format!("eval/trial{trial}_roc.csv")).is_file());
    }
    assert!(out.join("config.resolved.json").is_file());
}

#[test]
fn verify_raw_prints_score_and_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let fx = dir.path().join("fx");
    let o = run(&[
        "fixtures",
        "--out",
        fx.to_str().unwrap(),
        "--image-size",
        "64",
        "--subjects",
        "2",
        "--images-per-subject",
        "1",
        "--seed",
        "9",
    ]);
    assert!(o.status.success());
    let out = dir.path().join("ver");
    let probe = fx.join("s000_polar_R1_00.png");
    let gallery = fx.join("s000_visible_R1_00.png");
    let o = run(&[
        "verify",
        "--mode",
        "raw",
        "--image-size",
        "64",
        "--out",
        out.to_str().unwrap(),
        probe.to_str().unwrap(),
        gallery.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let payload: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    let score = payload["score"].as_f64().unwrap();
    assert!(score.is_finite() && score.abs() <= 1.0 + 1e-12);
    assert!(out.join("verify.json").is_file());
}

#[test]
fn exit_codes_follow_the_contract() {
    // Unreadable config file: 2.
    let o = run(&["train", "--config", "/nonexistent/cfg.json"]);
    assert_eq!(o.status.code(), Some(2));

    // Unknown key in the config file: 2.
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"trian": {}}"#).unwrap();
    let o = run(&["train", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    // Usage error (unknown subcommand): 2.
    let o = run(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));

    // Mode that needs synthesis but no checkpoint given: 2.
    let png = dir.path().join("fx");
    let ok = run(&[
        "fixtures", "--out", png.to_str().unwrap(), "--image-size", "64", "--subjects", "2",
        "--images-per-subject", "1",
    ]);
    assert!(ok.status.success());
    let p = png.join("s000_polar_R1_00.png");
    let g = png.join("s000_visible_R1_00.png");
    let o = run(&[
        "verify", "--mode", "fusion", "--image-size", "64",
        "--out", dir.path().join("v").to_str().unwrap(),
        p.to_str().unwrap(), g.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));

    // Runtime failure (checkpoint file missing): 1.
    let o = run(&[
        "synthesize", "--checkpoint", "/nonexistent/ckpt.narc", "--direction", "t2v",
        "--out", dir.path().join("s").to_str().unwrap(), p.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));

    // Flag value outside its domain: 2.
    let o = run(&["evaluate", "--mode", "sideways"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"train": {"seed": 1, "image_size": 224}, "out_dir": "unused"}"#,
    )
    .unwrap();
    let out = dir.path().join("fx");
    let o = run(&[
        "fixtures",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "77",
        "--image-size",
        "64",
        "--subjects",
        "2",
        "--images-per-subject",
        "1",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let snap: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("config.resolved.json")).unwrap())
            .unwrap();
    assert_eq!(snap["train"]["seed"], 77);
    assert_eq!(snap["train"]["image_size"], 64);
    assert_eq!(snap["network"]["image_size"], 64);
}
