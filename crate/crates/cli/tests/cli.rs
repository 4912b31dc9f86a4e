use std::process::{Command, Output};

fn chewssl(root: &std::path::Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chewssl"))
        .args(args)
        .env("CHEWSSL_OUTPUT_ROOT", root)
        .env("RUST_LOG", "off")
        .output()
        .unwrap()
}

fn error_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().rev().find(|l| l.starts_with('{')).expect("json error line");
    serde_json::from_str(line).unwrap()
}

#[test]
fn missing_artifact_names_the_producing_command() {
    let dir = tempfile::tempdir().unwrap();
    let out = chewssl(dir.path(), &["--preset", "small", "pretrain"]);
    assert_eq!(out.status.code(), Some(3));
    let err = error_json(&out);
    assert_eq!(err["error"]["kind"], "missing_artifact");
    assert!(err["error"]["hint"].as_str().unwrap().contains("chewssl preprocess"));
}

#[test]
fn bad_override_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = chewssl(dir.path(), &["--set", "head.epoch=3", "show-config"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"]["kind"], "config");
}

#[test]
fn show_config_round_trips_through_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = chewssl(dir.path(), &["--preset", "small", "--set", "seed=9", "show-config"]);
    assert!(out.status.success());
    let path = dir.path().join("resolved.json");
    std::fs::write(&path, &out.stdout).unwrap();
    let again = chewssl(dir.path(), &["--config", path.to_str().unwrap(), "show-config"]);
    assert!(again.status.success());
    assert_eq!(out.stdout, again.stdout);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["seed"], 9);
    assert_eq!(v["head"]["seed"], 9);
}

#[test]
fn synth_and_preprocess_write_their_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let tiny = ["--preset", "small", "--set", "synth.n_subjects=3", "--set", "synth.duration_s=30",
        "--set", "synth.meal_min_s=5", "--set", "synth.meal_max_s=10", "--set", "split.n_holdout=1"];
    for cmd in ["synth", "preprocess"] {
        let out = chewssl(dir.path(), &[&tiny[..], &[cmd]].concat());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let root = dir.path().join("runs");
    assert!(root.join("corpus/manifest.json").exists());
    assert!(root.join("preprocessed/manifest.json").exists());
    let split: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("preprocessed/split.json")).unwrap()).unwrap();
    assert_eq!(split["holdout"].as_array().unwrap().len(), 1);
}
