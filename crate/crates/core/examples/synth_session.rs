//! Generates one synthetic typing session and writes it to disk.
//!
//! ```bash
//! cargo run --release --example synth_session -- /tmp/session
//! ```

use finemotion::datapipe::{write_session_dir, Task};
use finemotion::synthlab::{gen_session, SessionParams, SynthConfig};

fn main() -> finemotion::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "synth_session".into());
    let params = SessionParams {
        task: Task::Typing,
        subject: 0,
        subject_seed: 42,
        session_index: 0,
        duration: 10.0,
        frame_rate: 20.0,
        side: 64,
    };
    let session = gen_session(&params, &SynthConfig::default())?;
    write_session_dir(std::path::Path::new(&out), &session)?;
    println!("{}: {} frames, {} marker frames, {} presses", session.id, session.images.len(), session.markers.len(), session.events.events.len());
    for e in session.events.events.iter().take(5) {
        println!("  finger {} from {:.2}s to {:.2}s", e.finger, e.onset, e.release);
    }
    println!("written to {out}");
    Ok(())
}
