//! Turns per-frame press probabilities into typed text and a MIDI file.
//!
//! ```bash
//! cargo run --release --example replay_midi -- /tmp/notes.mid
//! ```

use finemotion::datapipe::Task;
use finemotion::train::replay::{parse_midi, replay, write_midi, ReplayConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "notes.mid".into());
    let rate = 20.0;
    // index finger, middle finger, then thumb, each held a few frames
    let mut probs = vec![[0.05; 5]; 40];
    for (finger, frames) in [(1, 4..8), (2, 12..15), (0, 20..26)] {
        for row in &mut probs[frames] {
            row[finger] = 0.9;
        }
    }
    let cfg = ReplayConfig::default();
    let typed = replay(&probs, rate, Task::Typing, &cfg)?;
    println!("typed {:?}", typed.text.unwrap_or_default());
    let played = replay(&probs, rate, Task::Piano, &cfg)?;
    let notes = played.notes.unwrap_or_default();
    let bytes = write_midi(&notes);
    std::fs::write(&out, &bytes)?;
    for n in parse_midi(&bytes)? {
        println!("note {} from {:.3}s to {:.3}s", n.note, n.onset, n.release);
    }
    println!("wrote {} bytes to {out}", bytes.len());
    Ok(())
}
