//! Exercise the binary end to end: corpus generation, a tiny training run,
//! evaluation, PR export and the exit-code contract.

use std::path::Path;
use std::process::Command;

fn fslab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fslab"))
}

fn gen_corpus(dir: &Path) -> std::path::PathBuf {
    let corpus = dir.join("corpus");
    let out = fslab()
        .args([
            "synth",
            "gen",
            "--clips",
            "8",
            "--seed",
            "3",
            "--frames",
            "3",
            "--size",
            "32",
            "--split-ratios",
            "0.25",
            "0.25",
            "0.25",
            "0.25",
            "--out",
        ])
        .arg(&corpus)
        .output()
        .unwrap();
    assert!(out.status.success(), "synth gen failed: {}", String::from_utf8_lossy(&out.stderr));
    corpus
}

fn write_config(dir: &Path, corpus: &Path) -> std::path::PathBuf {
    let cfg_path = dir.join("cfg.json");
    let cfg = serde_json::json!({
        "corpus": corpus,
        "out_dir": dir.join("run"),
        "input_size": 32,
        "multi_scale": [1.0],
        "epochs": {"spatial": 1, "temporal": 1, "joint": 1},
        "batch_size": 2,
        "bpm_n": 1,
    });
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    cfg_path
}

#[test]
fn full_workflow_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = gen_corpus(dir.path());
    assert!(corpus.join("manifest.json").exists());
    assert!(corpus.join("clip_0000/frames/00000.png").exists());
    assert!(corpus.join("clip_0000/flow/00001.flo").exists());

    // refusing to overwrite without --force is a config error (exit 2)
    let out = fslab()
        .args(["synth", "gen", "--clips", "2", "--out"])
        .arg(&corpus)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let cfg_path = write_config(dir.path(), &corpus);
    let out = fslab().args(["train", "--config"]).arg(&cfg_path).output().unwrap();
    assert!(out.status.success(), "train failed: {}", String::from_utf8_lossy(&out.stderr));
    let ckpt = dir.path().join("run/checkpoint_final.bin");
    assert!(ckpt.exists());

    let eval_dir = dir.path().join("eval");
    let out = fslab()
        .args(["eval", "--split", "val", "--checkpoint"])
        .arg(&ckpt)
        .args(["--out"])
        .arg(&eval_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "eval failed: {}", String::from_utf8_lossy(&out.stderr));
    assert!(eval_dir.join("report.json").exists());
    let pr = std::fs::read_to_string(eval_dir.join("pr_curve.csv")).unwrap();
    assert_eq!(pr.lines().count(), 257, "header plus one row per threshold");

    let export = dir.path().join("pr_export.csv");
    let out = fslab()
        .args(["export-pr", "--report"])
        .arg(eval_dir.join("report.json"))
        .args(["--out"])
        .arg(&export)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&export).unwrap();
    assert!(text.starts_with("variant,threshold,precision,recall"));
    assert_eq!(text.lines().count(), 257);
}

#[test]
fn bad_config_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"corpus": "missing", "out_dir": "x", "input_size": 31}"#).unwrap();
    let out = fslab().args(["train", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn seed_env_var_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = gen_corpus(dir.path());
    let cfg_path = write_config(dir.path(), &corpus);

    let out = fslab()
        .env("FSLAB_SEED", "99")
        .args(["train", "--config"])
        .arg(&cfg_path)
        .output()
        .unwrap();
    assert!(out.status.success());
    let ckpt =
        fslab_core::harness::Checkpoint::load(&dir.path().join("run/checkpoint_final.bin"))
            .unwrap();
    assert_eq!(ckpt.config.seed, 99);
}
