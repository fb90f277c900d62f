//! Command-line front end shared by the `finemotion` binary.
//!
//! Every subcommand reads one TOML run configuration (`--config`), honours
//! `--seed` and writes its artifacts below `--out`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::datapipe::{align, load_dataset, read_session_dir, save_dataset, Dataset, Task};
use crate::error::{Error, Result};
use crate::kinematics::{extract_configuration, read_markers, write_configurations, AnchorTable};
use crate::netspec::reference::{check_against, CBMF_PRINTED_TOTAL, CBMF_ROWS, MF_PRINTED_TOTAL, MF_ROWS};
use crate::netspec::{build, count_params, format_count, ModelKind, FINGERS};
use crate::synthlab::{gen_corpus, write_corpus, CorpusSpec};
use crate::train::checkpoint::{load_params, save_params};
use crate::train::replay::{events_table, replay, write_midi, ReplayConfig};
use crate::train::{
    ablate_k, ablate_lambda, evaluate, fold_plan, prepare_dataset, run_crossval, session_probabilities, train,
    EpochRecord, MetricsReport, TrainConfig, ABLATION_K, ABLATION_LAMBDA,
};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "FINEMOTION_THREADS";

/// Stride and marker anchors used when turning session directories into a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub stride: usize,
    pub anchors: AnchorTable,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self { stride: 1, anchors: AnchorTable::default() }
    }
}

/// The document passed with `--config`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub corpus: CorpusSpec,
    pub ingest: IngestConfig,
    pub replay: ReplayConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.message().to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(e.to_string()))
    }

    /// Applies `--seed` to every seeded section.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.train.seed = s;
            self.corpus.seed = s;
        }
        self
    }
}

#[derive(Parser, Debug)]
#[command(name = "finemotion", version, about = "Finger-press inference from image sequences")]
pub struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the seed of the training and corpus sections.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate synthetic sessions as session directories.
    SynthGen,
    /// Convert a marker CSV into a joint-angle CSV.
    ExtractConfig {
        #[arg(long)]
        markers: PathBuf,
    },
    /// Align session directories and write a dataset container.
    BuildDataset {
        /// Directory holding one sub-directory per session.
        #[arg(long)]
        sessions: PathBuf,
    },
    /// Train one model on the configured fold.
    Train(DatasetArg),
    /// Grouped cross-validation over all folds.
    Crossval(DatasetArg),
    /// Score a parameter file on the held-out sessions of the configured fold.
    Eval {
        #[arg(long)]
        params: PathBuf,
        #[command(flatten)]
        data: DatasetArg,
        /// Score every session instead of the held-out fold.
        #[arg(long)]
        all: bool,
    },
    /// Sequence-length sweep (SF at k = 1, MF otherwise).
    AblateK(DatasetArg),
    /// Loss-weight sweep for CBMF.
    AblateLambda(DatasetArg),
    /// Turn per-frame press probabilities into events, text or MIDI.
    Replay {
        /// CSV with header `time_s,p1,p2,p3,p4,p5`.
        #[arg(long)]
        probs: PathBuf,
        #[arg(long)]
        task: Task,
        /// Frame rate; inferred from the time column when omitted.
        #[arg(long)]
        rate: Option<f64>,
    },
    /// Exact per-layer parameter counts of SF, MF and CBMF.
    CountParams,
}

#[derive(Args, Debug, Clone)]
pub struct DatasetArg {
    /// Dataset container; falls back to `train.dataset` in the config.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

/// Caps the global worker pool when `FINEMOTION_THREADS` is set.
pub fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::invalid(format!("{THREADS_ENV}={v} is not a positive integer")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::invalid(e.to_string()))?;
    }
    Ok(())
}

/// One-line JSON error report.
pub fn error_line(e: &Error) -> String {
    serde_json::json!({ "error": e.kind(), "message": e.to_string() }).to_string()
}

/// One-line JSON report for a command-line parsing failure.
pub fn usage_error_line(message: &str) -> String {
    let first = message.lines().next().unwrap_or("").trim_start_matches("error: ");
    serde_json::json!({ "error": "usage", "message": first }).to_string()
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::invalid(e.to_string()))?;
    write(path, text + "\n")
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn curves_csv(rows: &[(String, &[EpochRecord])]) -> String {
    let mut s = String::from("run,epoch,phase,train_bce,train_mse,test_bce,test_mse\n");
    for (run, curve) in rows {
        for r in curve.iter() {
            s.push_str(&format!(
                "{run},{},{},{},{},{},{}\n",
                r.epoch,
                r.phase,
                opt(r.train_bce),
                opt(r.train_mse),
                opt(r.test_bce),
                opt(r.test_mse)
            ));
        }
    }
    s
}

fn metrics_csv(report: &MetricsReport) -> String {
    let mut s = String::from("scope,name,accuracy,recall,precision,f1\n");
    let mut row = |scope: &str, name: &str, r: &crate::train::Rates| {
        s.push_str(&format!("{scope},{name},{},{},{},{}\n", r.accuracy, r.recall, r.precision, r.f1));
    };
    row("pooled", "all", &report.pooled);
    for (f, r) in report.per_finger.iter().enumerate() {
        row("finger", &(f + 1).to_string(), r);
    }
    for (name, r) in &report.per_subject {
        row("subject", name, r);
    }
    for (name, r) in &report.per_task {
        row("task", name, r);
    }
    s
}

fn dataset_path(arg: &DatasetArg, run: &RunConfig) -> Result<PathBuf> {
    arg.dataset
        .clone()
        .or_else(|| run.train.dataset.as_ref().map(PathBuf::from))
        .ok_or_else(|| Error::invalid("no dataset: pass --dataset or set train.dataset"))
}

fn load(arg: &DatasetArg, run: &RunConfig) -> Result<Dataset> {
    load_dataset(&dataset_path(arg, run)?)
}

/// Parses `time_s,p1..p5` rows.
pub fn read_probabilities(path: &Path) -> Result<(Vec<f64>, Vec<[f64; FINGERS]>)> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    let mut times = Vec::new();
    let mut probs = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let ctx = || format!("{}:{}", path.display(), line + 2);
        let rec = rec.map_err(|e| Error::parse(ctx(), e.to_string()))?;
        if rec.len() != FINGERS + 1 {
            return Err(Error::parse(ctx(), format!("expected {} columns, found {}", FINGERS + 1, rec.len())));
        }
        let mut vals = [0.0; FINGERS + 1];
        for (v, field) in vals.iter_mut().zip(rec.iter()) {
            *v = field.trim().parse().map_err(|_| Error::parse(ctx(), format!("`{field}` is not a number")))?;
        }
        times.push(vals[0]);
        probs.push(std::array::from_fn(|f| vals[f + 1]));
    }
    Ok((times, probs))
}

pub fn write_probabilities(path: &Path, times: &[f64], probs: &[[f64; FINGERS]]) -> Result<()> {
    let mut s = String::from("time_s,p1,p2,p3,p4,p5\n");
    for (t, p) in times.iter().zip(probs) {
        s.push_str(&format!("{t},{},{},{},{},{}\n", p[0], p[1], p[2], p[3], p[4]));
    }
    write(path, s)
}

fn infer_rate(times: &[f64]) -> Result<f64> {
    let mut d: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    d.sort_by(f64::total_cmp);
    match d.get(d.len() / 2) {
        Some(&dt) if dt > 0.0 => Ok(1.0 / dt),
        _ => Err(Error::invalid("cannot infer a frame rate; pass --rate")),
    }
}

/// Runs one parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    let run = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    }
    .with_seed(cli.seed);
    let out = &cli.out;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    match &cli.command {
        Command::SynthGen => {
            let sessions = gen_corpus(&run.corpus)?;
            write_corpus(out, &sessions)?;
            write(&out.join("corpus.toml"), toml::to_string(&run.corpus).map_err(|e| Error::invalid(e.to_string()))?)?;
        }
        Command::ExtractConfig { markers } => {
            let frames = read_markers(markers)?;
            let rows = frames
                .iter()
                .map(|f| Ok((f.time, extract_configuration(f, &run.ingest.anchors)?)))
                .collect::<Result<Vec<_>>>()?;
            write_configurations(&out.join("configurations.csv"), &rows)?;
        }
        Command::BuildDataset { sessions } => {
            let mut dirs: Vec<PathBuf> = fs::read_dir(sessions)
                .map_err(|e| Error::io(sessions, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.join("session.toml").is_file())
                .collect();
            dirs.sort();
            if dirs.is_empty() {
                return Err(Error::Empty(format!("no session directories under {}", sessions.display())));
            }
            let mut aligned = Vec::new();
            let mut report = String::from("session,kept,dropped_unmatched,dropped_degenerate\n");
            for d in &dirs {
                let s = read_session_dir(d)?;
                let (a, r) = align(&s, run.train.image_side, &run.ingest.anchors)?;
                report.push_str(&format!("{},{},{},{}\n", a.id, r.kept, r.dropped_unmatched, r.dropped_degenerate));
                aligned.push(a);
            }
            let data = Dataset::from_sessions(aligned, run.train.window_len(), run.ingest.stride)?;
            save_dataset(&out.join("dataset.fmd"), &data)?;
            write(&out.join("ingest.csv"), report)?;
        }
        Command::Train(arg) => {
            let base = load(arg, &run)?;
            let data = prepare_dataset(&run.train, &base)?;
            let plan = fold_plan(&run.train, &data)?;
            let train_ids = plan.train_sessions(run.train.fold);
            let test_ids = plan.test_sessions(run.train.fold).to_vec();
            let outcome = train(&run.train, &data, &train_ids, &test_ids)?;
            save_params(&out.join("params.fmp"), outcome.network.spec(), &outcome.store)?;
            let report = evaluate(&outcome.network, &outcome.store, &data, &data.windows_of(&test_ids))?;
            write(&out.join("curves.csv"), curves_csv(&[(run.train.model.label().to_string(), &outcome.curves)]))?;
            write(&out.join("metrics.csv"), metrics_csv(&report))?;
            write_json(
                &out.join("summary.json"),
                &serde_json::json!({
                    "config": run.train,
                    "train_sessions": train_ids,
                    "test_sessions": test_ids,
                    "phase_probe": outcome.probe,
                    "metrics": report,
                    "curves": outcome.curves,
                }),
            )?;
        }
        Command::Crossval(arg) => {
            let data = load(arg, &run)?;
            let report = run_crossval(&run.train, &data)?;
            let rows: Vec<(String, &[EpochRecord])> =
                report.folds.iter().map(|f| (format!("fold{}", f.fold), f.curves.as_slice())).collect();
            write(&out.join("curves.csv"), curves_csv(&rows))?;
            let mut folds = String::from("fold,accuracy,recall,precision,f1,test_sessions\n");
            for f in &report.folds {
                let r = &f.report.pooled;
                folds.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    f.fold,
                    r.accuracy,
                    r.recall,
                    r.precision,
                    r.f1,
                    f.test_sessions.join(";")
                ));
            }
            write(&out.join("folds.csv"), folds)?;
            write_json(&out.join("crossval.json"), &report)?;
            if !report.audit.passed() {
                return Err(Error::invalid(format!("session audit failed: {:?}", report.audit)));
            }
        }
        Command::Eval { params, data: arg, all } => {
            let (network, store) = load_params(params)?;
            let spec = network.spec();
            let cfg = TrainConfig {
                model: spec.kind,
                k: spec.k,
                image_side: spec.image_side,
                width_divisor: spec.width_divisor,
                ..run.train.clone()
            };
            let data = prepare_dataset(&cfg, &load(arg, &run)?)?;
            let ids: Vec<String> = if *all {
                data.sessions.iter().map(|s| s.id.clone()).collect()
            } else {
                fold_plan(&cfg, &data)?.test_sessions(cfg.fold).to_vec()
            };
            let report = evaluate(&network, &store, &data, &data.windows_of(&ids))?;
            write(&out.join("metrics.csv"), metrics_csv(&report))?;
            write_json(&out.join("metrics.json"), &report)?;
            let dir = out.join("probabilities");
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for id in &ids {
                let s = data.session_index(id).expect("listed session");
                let probs = session_probabilities(&network, &store, &data, s)?;
                write_probabilities(&dir.join(format!("{id}.csv")), &data.sessions[s].times, &probs)?;
            }
        }
        Command::AblateK(arg) => {
            let data = load(arg, &run)?;
            let rows = ablate_k(&run.train, &data, &ABLATION_K)?;
            let curves: Vec<(String, &[EpochRecord])> =
                rows.iter().map(|r| (format!("k{}", r.k), r.curve.as_slice())).collect();
            write(&out.join("ablate_k.csv"), curves_csv(&curves))?;
            write_json(&out.join("ablate_k.json"), &rows)?;
        }
        Command::AblateLambda(arg) => {
            let data = load(arg, &run)?;
            let rows = ablate_lambda(&run.train, &data, &ABLATION_LAMBDA)?;
            let mut s = String::from("lambda,train_bce,train_mse,test_bce,test_mse\n");
            for r in &rows {
                s.push_str(&format!(
                    "{},{},{},{},{}\n",
                    r.lambda,
                    opt(r.final_train_bce),
                    opt(r.final_train_mse),
                    opt(r.final_test_bce),
                    opt(r.final_test_mse)
                ));
            }
            write(&out.join("ablate_lambda.csv"), s)?;
            write_json(&out.join("ablate_lambda.json"), &rows)?;
        }
        Command::Replay { probs, task, rate } => {
            let (times, p) = read_probabilities(probs)?;
            let rate = match rate {
                Some(r) => *r,
                None => infer_rate(&times)?,
            };
            let result = replay(&p, rate, *task, &run.replay)?;
            write(&out.join("events.csv"), events_table(&result, &run.replay))?;
            if let Some(text) = &result.text {
                write(&out.join("text.txt"), text)?;
            }
            if let Some(notes) = &result.notes {
                write(&out.join("notes.mid"), write_midi(notes))?;
            }
        }
        Command::CountParams => {
            let g = run.train.geometry();
            let mut csv = String::from("model,layer,kind,output_shape,params,formatted\n");
            let mut summary = serde_json::Map::new();
            let mut table = String::new();
            for kind in [ModelKind::Sf, ModelKind::Mf, ModelKind::Cbmf] {
                let spec = build(kind, g)?;
                let report = count_params(&spec)?;
                table.push_str(&format!("{} ({} parameters, {})\n", kind.label(), report.total, format_count(report.total)));
                for l in &report.layers {
                    let shape = l.output_shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x");
                    table.push_str(&format!("  {:<18} {:>14} {:>12} {:>10}\n", l.name, shape, l.params, format_count(l.params)));
                    csv.push_str(&format!(
                        "{},{},{},{},{},{}\n",
                        kind.label(),
                        l.name,
                        l.kind,
                        shape,
                        l.params,
                        format_count(l.params)
                    ));
                }
                let check = match kind {
                    ModelKind::Mf if g == crate::netspec::Geometry::full_size() => {
                        Some(check_against(&spec, &MF_ROWS, MF_PRINTED_TOTAL)?)
                    }
                    ModelKind::Cbmf if g == crate::netspec::Geometry::full_size() => {
                        Some(check_against(&spec, &CBMF_ROWS, CBMF_PRINTED_TOTAL)?)
                    }
                    _ => None,
                };
                if let Some(c) = &check {
                    table.push_str(&format!(
                        "  rows match printed table: {}; exact total {} vs printed {} ({})\n",
                        c.all_rows_match(),
                        c.exact_total,
                        c.printed_total,
                        if c.total_matches { "consistent" } else { "inconsistent with the rows" }
                    ));
                }
                summary.insert(
                    kind.label().to_string(),
                    serde_json::json!({ "total": report.total, "layers": report.layers, "table_check": check }),
                );
            }
            let _ = std::io::Write::write_all(&mut std::io::stdout().lock(), table.as_bytes());
            write(&out.join("params.csv"), csv)?;
            write_json(&out.join("params.json"), &summary)?;
        }
    }
    Ok(())
}
