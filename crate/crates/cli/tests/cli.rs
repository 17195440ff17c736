mod common;

use common::*;

#[test]
fn zero_epochs_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["train", "--out", &dir.path().display().to_string(), "--set", "data=x", "--set", "epochs=0"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: config:") && err.contains("epochs"), "{err}");
    assert!(!dir.path().join("config.txt").exists());
}

#[test]
fn all_unknown_keys_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.txt");
    std::fs::write(&cfg, "# typos\nepoch=3\nlearnin_rate=0.1\n").unwrap();
    let out = run(&["train", "--config", &cfg.display().to_string(), "--set", "colour=red"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert_eq!(err.lines().count(), 1, "{err}");
    for k in ["`epoch`", "`learnin_rate`", "`colour`"] {
        assert!(err.contains(k), "{k} missing from {err}");
    }
}

#[test]
fn bad_usage_exits_two() {
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("error: usage:"));
    let out = run(&["inspect"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_data_is_an_error_not_a_panic() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope").display().to_string();
    let out = run(&["baseline", "--out", &dir.path().join("o").display().to_string(), "--set", &format!("data={missing}")]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: "), "{err}");
}

#[test]
fn inspect_vgg19() {
    let out = ok(&["inspect", "--arch", "VGG19"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("| block5_conv1 | Conv2D | 14×14×512 | 2,359,808 | yes |"), "{text}");
    assert!(text.contains("143,667,240"), "{text}");
}

#[test]
fn inspect_frozen_truncated_model() {
    let out = ok(&["inspect", "--arch", "VGG19_TRUNC", "--trainable", "last_5"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("| block4_conv4 | Conv2D | 28×28×512 | 2,359,808 | no |"), "{text}");
    assert!(text.contains("| block5_conv1 | Conv2D | 14×14×512 | 2,359,808 | yes |"), "{text}");
}

#[test]
fn output_root_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let status = std::process::Command::new(BIN)
        .args(["synth", "--set", "videos_per_class=1", "--set", "frames_per_video=1"])
        .env("TRAFFICNET_OUT", dir.path())
        .output()
        .unwrap();
    assert!(status.status.success());
    assert!(dir.path().join("synth").join("manifest.csv").exists());
}

#[test]
fn pipeline_reruns_identically_from_recorded_configs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_pipeline(a.path());
    for f in ["eval/table1.md", "eval/table2.md", "eval/table3.md", "baseline/thresholds.txt", "pca/scatter.svg", "transfer/import.txt"] {
        assert!(a.path().join(f).exists(), "{f}");
    }
    rerun_from_configs(a.path(), b.path()).unwrap();
}
