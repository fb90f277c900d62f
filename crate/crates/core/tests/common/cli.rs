use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const TINY_CONFIG: &str = r#"
[train]
k = 2
image_side = 32
width_divisor = 8
batch_size = 8
epochs = 2
phase1_epochs = 1
folds = 2
windows_per_clip = 4
batches_per_epoch = 2
eval_windows = 16
dropout = 0.0

[corpus]
subjects = 2
sessions_per_task = 1
duration = 4.0
side = 32
"#;

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_finemotion")
}

pub fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).env("FINEMOTION_THREADS", "1").output().expect("binary runs")
}

fn run_ok(args: &[&str]) -> Result<(), String> {
    let out = run(args);
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Runs every subcommand once below `root` with the tiny configuration.
pub fn run_pipeline(root: &Path, seed: u64) -> Result<(), String> {
    fs::create_dir_all(root).map_err(|e| e.to_string())?;
    let config = root.join("run.toml");
    fs::write(&config, TINY_CONFIG).map_err(|e| e.to_string())?;
    let seed = seed.to_string();
    let common = |out: &Path| vec!["--config".to_string(), s(&config).to_string(), "--seed".into(), seed.clone(), "--out".into(), s(out).to_string()];
    let go = |cmd: &[&str], out: &Path| {
        let mut args: Vec<String> = cmd.iter().map(|a| a.to_string()).collect();
        args.extend(common(out));
        run_ok(&args.iter().map(String::as_str).collect::<Vec<_>>())
    };
    let synth = root.join("synth");
    go(&["synth-gen"], &synth)?;
    let mut sessions: Vec<PathBuf> = fs::read_dir(&synth)
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    sessions.sort();
    let markers = sessions.first().ok_or("no sessions generated")?.join("markers.csv");
    go(&["extract-config", "--markers", s(&markers)], &root.join("extract"))?;
    go(&["build-dataset", "--sessions", s(&synth)], &root.join("dataset"))?;
    let dataset = root.join("dataset/dataset.fmd");
    go(&["train", "--dataset", s(&dataset)], &root.join("train"))?;
    go(&["crossval", "--dataset", s(&dataset)], &root.join("crossval"))?;
    let params = root.join("train/params.fmp");
    go(&["eval", "--params", s(&params), "--dataset", s(&dataset)], &root.join("eval"))?;
    go(&["ablate-k", "--dataset", s(&dataset)], &root.join("ablate_k"))?;
    go(&["ablate-lambda", "--dataset", s(&dataset)], &root.join("ablate_lambda"))?;
    let probs = fs::read_dir(root.join("eval/probabilities"))
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .min()
        .ok_or("eval wrote no probabilities")?;
    go(&["replay", "--probs", s(&probs), "--task", "piano"], &root.join("replay_piano"))?;
    go(&["replay", "--probs", s(&probs), "--task", "typing"], &root.join("replay_typing"))?;
    go(&["count-params"], &root.join("count_params"))?;
    Ok(())
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).expect("readable directory").flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).expect("below root").to_path_buf());
            }
        }
    }
    out.sort();
    out
}

/// Byte-compares two output trees; returns the number of files compared.
pub fn compare_trees(a: &Path, b: &Path) -> Result<usize, String> {
    let (fa, fb) = (files(a), files(b));
    if fa != fb {
        return Err(format!("file lists differ: {} vs {}", fa.len(), fb.len()));
    }
    for f in &fa {
        let (x, y) = (fs::read(a.join(f)).map_err(|e| e.to_string())?, fs::read(b.join(f)).map_err(|e| e.to_string())?);
        if x != y {
            return Err(format!("{} differs", f.display()));
        }
    }
    Ok(fa.len())
}
