use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL_K2: &str = r#"
[model]
kind = "k1"
hidden = 8

[data]
dir = "data"
test_trajectories = 2

[train]
patience = 50
max_inner_steps = 100
max_outer = 2

[constraints]
enabled = true
collocation_points = 64
eval_points = 64

[run]
name = "small"
seeds = [0]
out = "runs"
"#;

fn pinode(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pinode"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> bool {
    if !out.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    out.status.success()
}

#[test]
fn gen_data_train_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("small.toml"), SMALL_K2).unwrap();

    assert!(ok(&pinode(dir, &["gen-data", "--config", "small.toml"])));
    assert!(dir.join("data/train").is_dir() && dir.join("data/test").is_dir());
    assert!(!pinode(dir, &["gen-data", "--config", "small.toml"])
        .status
        .success());
    assert!(ok(&pinode(
        dir,
        &["gen-data", "--config", "small.toml", "--overwrite"]
    )));

    let train = pinode(dir, &["train", "--config", "small.toml", "--seed", "3,4"]);
    assert!(ok(&train));
    for seed in ["3", "4"] {
        let run = dir.join("runs/small").join(seed);
        for file in [
            "config.toml",
            "metrics.csv",
            "checkpoint.txt",
            "summary.json",
        ] {
            assert!(run.join(file).is_file(), "{seed}/{file} missing");
        }
    }
    assert!(
        !pinode(dir, &["train", "--config", "small.toml", "--seed", "3"])
            .status
            .success()
    );

    let eval = pinode(dir, &["eval", "--config", "small.toml", "--seed", "3,4"]);
    assert!(ok(&eval));
    assert!(dir.join("runs/small/3/eval.json").is_file());
    let stdout = String::from_utf8_lossy(&eval.stdout);
    assert!(stdout.contains("geometric-mean test loss"), "{stdout}");

    let report = pinode(
        dir,
        &[
            "eval",
            "--config",
            "small.toml",
            "--checkpoint",
            "runs/small/3/checkpoint.txt",
            "--out",
            "single.json",
        ],
    );
    assert!(ok(&report));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("single.json")).unwrap()).unwrap();
    assert!(json["test_loss"].as_f64().unwrap().is_finite());
}

#[test]
fn bad_config_fails_without_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("bad.toml"), "[model]\nwidth = 3\n").unwrap();
    let out = pinode(dir, &["gen-data", "--config", "bad.toml"]);
    assert!(!out.status.success());
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
    assert!(!dir.join("data").exists());
}
