//! Aligns a small synthetic corpus, cuts windows and round-trips the
//! binary dataset file.
//!
//! ```bash
//! cargo run --release --example windowed_dataset
//! ```

use finemotion::datapipe::{align_all, load_dataset, save_dataset, Dataset};
use finemotion::kinematics::AnchorTable;
use finemotion::synthlab::{gen_corpus, CorpusSpec};

fn main() -> finemotion::Result<()> {
    let spec = CorpusSpec { subjects: 2, sessions_per_task: 1, duration: 8.0, side: 32, ..CorpusSpec::default() };
    let sessions = gen_corpus(&spec)?;
    let aligned = align_all(&sessions, spec.side, &AnchorTable::default())?;
    for (s, report) in &aligned {
        println!("{}: kept {} frames, dropped {}", s.id, report.kept, report.dropped_unmatched + report.dropped_degenerate);
    }
    let data = Dataset::from_sessions(aligned.into_iter().map(|(s, _)| s).collect(), 8, 1)?;
    let sample = data.sample(data.windows[0]);
    println!("{} windows of {} frames; first spans {:.2}s to {:.2}s", data.windows.len(), data.k, sample.times[0], sample.times[data.k - 1]);

    let dir = tempfile_dir();
    let path = dir.join("dataset.fmd");
    save_dataset(&path, &data)?;
    let back = load_dataset(&path)?;
    println!("reloaded {} sessions, {} windows from {}", back.sessions.len(), back.windows.len(), path.display());
    Ok(())
}

fn tempfile_dir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join("finemotion-example");
    std::fs::create_dir_all(&dir).expect("temp dir is writable");
    dir
}
