#![allow(dead_code)]

pub mod cli;
pub mod grad;

use finemotion::datapipe::{PressEvent, Task};
use finemotion::train::replay::{extract_events, parse_midi, rasterize, replay, write_midi, NoteEvent, ReplayConfig};
use rand::Rng;

pub const RATE: f64 = 20.0;

/// Frame-aligned events with at least two empty frames between runs of the
/// same finger, sorted the way replay emits them.
pub fn random_stream<R: Rng>(rng: &mut R, frames: usize) -> Vec<PressEvent> {
    let mut events = Vec::new();
    for finger in 1..=5u8 {
        let mut j = rng.gen_range(0..6);
        while j < frames {
            let len = rng.gen_range(1..=8);
            let end = (j + len).min(frames);
            events.push(PressEvent { finger, onset: j as f64 / RATE, release: end as f64 / RATE });
            j = end + rng.gen_range(2..=12);
        }
    }
    events.sort_by(|a, b| a.onset.total_cmp(&b.onset).then(a.finger.cmp(&b.finger)));
    events
}

/// Notes decoded with `midly`, independent of the in-house reader.
pub fn midly_notes(bytes: &[u8]) -> Vec<NoteEvent> {
    use midly::{MetaMessage, MidiMessage, Smf, Timing, TrackEventKind};
    let smf = Smf::parse(bytes).expect("midly parses the file");
    let Timing::Metrical(div) = smf.header.timing else { panic!("timecode timing") };
    let div = f64::from(div.as_int());
    let mut tempo = 500_000.0;
    let mut seconds = 0.0;
    let mut open: Vec<(u8, f64)> = Vec::new();
    let mut notes = Vec::new();
    for ev in &smf.tracks[0] {
        seconds += f64::from(ev.delta.as_int()) * tempo / 1e6 / div;
        match ev.kind {
            TrackEventKind::Meta(MetaMessage::Tempo(t)) => tempo = f64::from(t.as_int()),
            TrackEventKind::Midi { message, .. } => {
                let (key, on) = match message {
                    MidiMessage::NoteOn { key, vel } => (key.as_int(), vel.as_int() > 0),
                    MidiMessage::NoteOff { key, .. } => (key.as_int(), false),
                    _ => continue,
                };
                if on {
                    open.push((key, seconds));
                } else if let Some(i) = open.iter().position(|(n, _)| *n == key) {
                    let (_, onset) = open.remove(i);
                    notes.push(NoteEvent { note: key, onset, release: seconds });
                }
            }
            _ => {}
        }
    }
    notes.sort_by(|a, b| a.onset.total_cmp(&b.onset).then(a.note.cmp(&b.note)));
    notes
}

fn same_notes(a: &[NoteEvent], b: &[NoteEvent], tick: f64) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.note == y.note && (x.onset - y.onset).abs() <= tick && (x.release - y.release).abs() <= tick
        })
}

/// Rasterize, replay and re-read `streams` random streams; returns the first
/// mismatch.
pub fn replay_round_trips<R: Rng>(rng: &mut R, streams: usize) -> Result<(), String> {
    let cfg = ReplayConfig::default();
    let tick = 1.0 / 960.0;
    for s in 0..streams {
        let frames = rng.gen_range(20..200);
        let events = random_stream(rng, frames);
        let probs = rasterize(&events, frames, RATE);
        let back = extract_events(&probs, RATE, &cfg).map_err(|e| e.to_string())?;
        if back != events {
            return Err(format!("stream {s}: events differ after rasterize/replay"));
        }
        let notes = replay(&probs, RATE, Task::Piano, &cfg).map_err(|e| e.to_string())?.notes.unwrap_or_default();
        let mut expected = notes.clone();
        expected.sort_by(|a, b| a.onset.total_cmp(&b.onset).then(a.note.cmp(&b.note)));
        let bytes = write_midi(&notes);
        let ours = parse_midi(&bytes).map_err(|e| e.to_string())?;
        if !same_notes(&expected, &ours, tick) {
            return Err(format!("stream {s}: MIDI re-parse differs"));
        }
        if !same_notes(&expected, &midly_notes(&bytes), tick) {
            return Err(format!("stream {s}: midly reading differs"));
        }
    }
    Ok(())
}
