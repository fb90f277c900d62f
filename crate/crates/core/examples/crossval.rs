//! Session-grouped cross-validation of the single-frame baseline.
//!
//! ```bash
//! cargo run --release --example crossval
//! ```

use finemotion::datapipe::Task;
use finemotion::netspec::ModelKind;
use finemotion::synthlab::{synth_dataset, CorpusSpec};
use finemotion::train::{run_crossval, TrainConfig};

fn main() -> finemotion::Result<()> {
    let spec = CorpusSpec { subjects: 4, sessions_per_task: 1, duration: 60.0, side: 32, ..CorpusSpec::default() };
    let cfg = TrainConfig {
        model: ModelKind::Sf,
        k: 1,
        image_side: 32,
        width_divisor: 8,
        batch_size: 16,
        epochs: 15,
        batches_per_epoch: 20,
        eval_windows: 64,
        folds: 4,
        task: Some(Task::Typing),
        dropout: Some(0.0),
        ..TrainConfig::default()
    };
    let report = run_crossval(&cfg, &synth_dataset(&spec, 1, 1)?)?;
    for f in &report.folds {
        println!("fold {}: test {:?}, F1 {:.3}", f.fold, f.test_sessions, f.report.pooled.f1);
    }
    println!("mean F1 {:.3} ± {:.3}; pooled F1 {:.3}", report.mean.f1, report.std.f1, report.pooled.f1);
    println!("audit: {} repeated, {} leaking sessions", report.audit.repeated.len(), report.audit.leaks.len());
    Ok(())
}
