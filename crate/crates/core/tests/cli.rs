mod common;

use common::cli::{run, run_pipeline};

fn single_json_line(stderr: &[u8]) -> serde_json::Value {
    let text = String::from_utf8_lossy(stderr);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1, "stderr: {text}");
    serde_json::from_str(lines[0]).expect("error line is JSON")
}

#[test]
fn missing_config_is_one_line_with_nonzero_exit() {
    let out = run(&["train", "--config", "/nonexistent/run.toml"]);
    assert_eq!(out.status.code(), Some(1));
    let v = single_json_line(&out.stderr);
    assert_eq!(v["error"], "io");
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = run(&["count-params", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(single_json_line(&out.stderr)["error"], "usage");
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nlearning_rat = 0.1\n").unwrap();
    let out = run(&["count-params", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let v = single_json_line(&out.stderr);
    assert!(v["message"].as_str().unwrap().contains("learning_rat"), "{v}");
}

#[test]
fn train_without_dataset_names_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["train", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(single_json_line(&out.stderr)["message"].as_str().unwrap().contains("dataset"));
}

#[test]
fn corrupt_dataset_reports_an_offset() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("broken.fmd");
    std::fs::write(&ds, b"not a dataset").unwrap();
    let out = run(&["train", "--dataset", ds.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let v = single_json_line(&out.stderr);
    assert_eq!(v["error"], "format");
}

#[test]
fn count_params_prints_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["count-params", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("22929682"));
    assert!(text.contains("inconsistent with the rows"));
    assert!(dir.path().join("params.csv").is_file());
}

#[test]
fn every_subcommand_writes_its_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    run_pipeline(root, 3).unwrap();
    for f in [
        "synth/corpus.toml",
        "extract/configurations.csv",
        "dataset/dataset.fmd",
        "dataset/ingest.csv",
        "train/params.fmp",
        "train/curves.csv",
        "train/summary.json",
        "crossval/crossval.json",
        "crossval/folds.csv",
        "eval/metrics.json",
        "ablate_k/ablate_k.csv",
        "ablate_lambda/ablate_lambda.csv",
        "replay_piano/notes.mid",
        "replay_piano/events.csv",
        "replay_typing/text.txt",
        "count_params/params.json",
    ] {
        assert!(root.join(f).is_file(), "missing {f}");
    }
    let cv: serde_json::Value = serde_json::from_slice(&std::fs::read(root.join("crossval/crossval.json")).unwrap()).unwrap();
    assert!(cv["audit"]["repeated"].as_array().unwrap().is_empty());
    assert!(cv["audit"]["leaks"].as_array().unwrap().is_empty());
}

#[test]
fn reruns_are_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_pipeline(&a, 11).unwrap();
    run_pipeline(&b, 11).unwrap();
    let n = common::cli::compare_trees(&a, &b).unwrap();
    assert!(n > 100, "{n} files");
}
