//! Trains a small multi-frame model on synthetic typing and reports
//! held-out press metrics.
//!
//! ```bash
//! cargo run --release --example train_tiny
//! ```

use finemotion::datapipe::Task;
use finemotion::netspec::{ModelKind, Scope};
use finemotion::synthlab::{synth_dataset, CorpusSpec};
use finemotion::train::{fold_plan, metrics_from_predictions, predict, prepare_dataset, train, TrainConfig};

fn main() -> finemotion::Result<()> {
    let spec = CorpusSpec { subjects: 3, sessions_per_task: 1, duration: 60.0, side: 32, ..CorpusSpec::default() };
    let cfg = TrainConfig {
        model: ModelKind::Mf,
        k: 4,
        image_side: 32,
        width_divisor: 8,
        batch_size: 16,
        epochs: 15,
        batches_per_epoch: 20,
        eval_windows: 100,
        folds: 3,
        task: Some(Task::Typing),
        dropout: Some(0.0),
        ..TrainConfig::default()
    };
    let data = prepare_dataset(&cfg, &synth_dataset(&spec, cfg.k, 1)?)?;
    let plan = fold_plan(&cfg, &data)?;
    let test = plan.test_sessions(0).to_vec();
    let out = train(&cfg, &data, &plan.train_sessions(0), &test)?;
    for r in &out.curves {
        println!("epoch {:>2}: train BCE {:.4}, test BCE {:.4}", r.epoch, r.train_bce.unwrap_or(f64::NAN), r.test_bce.unwrap_or(f64::NAN));
    }
    let preds = predict(&out.network, &out.store, &data, &data.windows_of(&test), Scope::Full)?;
    let m = metrics_from_predictions(&data, &preds)?.pooled;
    println!("held out {test:?}: accuracy {:.3}, precision {:.3}, recall {:.3}, F1 {:.3}", m.accuracy, m.precision, m.recall, m.f1);
    Ok(())
}
