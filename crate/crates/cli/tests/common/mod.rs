#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_trafficnet");

pub fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("TRAFFICNET_OUT")
        .output()
        .expect("spawn trafficnet")
}

pub fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "trafficnet {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Relative path to contents for every file under `root`.
pub fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Stage name and its arguments after `--out`.
pub fn pipeline(root: &Path) -> Vec<(&'static str, Vec<String>)> {
    let p = |s: &str| root.join(s).display().to_string();
    let set = |kv: String| vec!["--set".to_string(), kv];
    let stage = |cmd: &'static str, kvs: Vec<String>| -> (&'static str, Vec<String>) {
        (cmd, kvs.into_iter().flat_map(set).collect())
    };
    vec![
        stage("synth", vec!["videos_per_class=5".into(), "frames_per_video=2".into()]),
        stage(
            "synth",
            vec!["task=count_tercile".into(), "source_videos=12".into(), "frames_per_video=1".into(), "seed=99".into()],
        ),
        stage("train", vec![format!("data={}", p("src")), "epochs=1".into(), "batch_size=4".into()]),
        stage(
            "transfer",
            vec![format!("data={}", p("data")), format!("source={}", p("train/weights.nnwt")), "epochs=1".into(), "batch_size=4".into()],
        ),
        stage(
            "eval",
            vec![format!("data={}", p("data")), format!("weights={}", p("transfer/weights.nnwt")), "folds=3".into(), "epochs=1".into()],
        ),
        stage("baseline", vec![format!("data={}", p("data")), "folds=3".into()]),
        stage("pca", vec![format!("data={}", p("data")), format!("weights={}", p("transfer/weights.nnwt"))]),
    ]
}

pub const STAGE_DIRS: [&str; 7] = ["data", "src", "train", "transfer", "eval", "baseline", "pca"];

/// Run every stage into `root/<dir>`.
pub fn run_pipeline(root: &Path) {
    for ((cmd, args), dir) in pipeline(root).into_iter().zip(STAGE_DIRS) {
        let out = root.join(dir).display().to_string();
        let mut all = vec![cmd, "--out", &out];
        all.extend(args.iter().map(String::as_str));
        ok(&all);
    }
}

/// Re-run each stage of `first` from its recorded config into `second`, then
/// compare every output file of every stage.
pub fn rerun_from_configs(first: &Path, second: &Path) -> Result<(), String> {
    for ((cmd, _), dir) in pipeline(first).into_iter().zip(STAGE_DIRS) {
        let cfg: PathBuf = first.join(dir).join("config.txt");
        let out = second.join(dir).display().to_string();
        ok(&[cmd, "--config", &cfg.display().to_string(), "--out", &out]);
        let (a, b) = (tree(&first.join(dir)), tree(&second.join(dir)));
        if a.keys().ne(b.keys()) {
            return Err(format!("{dir}: file sets differ"));
        }
        for (name, bytes) in &a {
            if b[name] != *bytes {
                return Err(format!("{dir}/{name} differs"));
            }
        }
    }
    Ok(())
}
