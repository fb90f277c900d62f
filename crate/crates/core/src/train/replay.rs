//! Turning per-frame press probabilities back into timed events, notes and
//! keystrokes, plus a minimal Standard MIDI File writer and reader.

use serde::{Deserialize, Serialize};

use crate::datapipe::{press_vector_at, PressEvent, Task};
use crate::error::{Error, Result};
use crate::netspec::FINGERS;

pub const MIDI_DIVISION: u16 = 480;
/// Microseconds per quarter note at 120 bpm.
pub const MIDI_TEMPO: u32 = 500_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReplayConfig {
    pub threshold: f64,
    /// Off-runs of at most this many frames between two on-runs are filled.
    pub max_gap_frames: usize,
    /// On-runs shorter than this are discarded.
    pub min_run_frames: usize,
    /// MIDI note per finger, thumb first.
    pub notes: [u8; FINGERS],
    /// Character per finger, thumb first.
    pub keys: [String; FINGERS],
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            max_gap_frames: 1,
            min_run_frames: 1,
            notes: [60, 62, 64, 65, 67],
            keys: [" ", "j", "k", "l", ";"].map(String::from),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoteEvent {
    pub note: u8,
    pub onset: f64,
    pub release: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayOutput {
    pub events: Vec<PressEvent>,
    pub text: Option<String>,
    pub notes: Option<Vec<NoteEvent>>,
}

/// Debounced per-finger runs of `probs` (`T` rows of five) as events; frame
/// `j` sits at `j / rate` seconds.
pub fn extract_events(probs: &[[f64; FINGERS]], rate: f64, cfg: &ReplayConfig) -> Result<Vec<PressEvent>> {
    if !(rate > 0.0) {
        return Err(Error::invalid(format!("frame rate {rate} must be positive")));
    }
    let mut events = Vec::new();
    for f in 0..FINGERS {
        let mut on: Vec<bool> = probs.iter().map(|p| p[f] >= cfg.threshold).collect();
        // fill short gaps that sit between two on-runs
        let mut j = 0;
        while j < on.len() {
            if !on[j] {
                let start = j;
                while j < on.len() && !on[j] {
                    j += 1;
                }
                if start > 0 && j < on.len() && j - start <= cfg.max_gap_frames {
                    on[start..j].iter_mut().for_each(|v| *v = true);
                }
            } else {
                j += 1;
            }
        }
        let mut j = 0;
        while j < on.len() {
            if on[j] {
                let start = j;
                while j < on.len() && on[j] {
                    j += 1;
                }
                if j - start >= cfg.min_run_frames.max(1) {
                    events.push(PressEvent {
                        finger: f as u8 + 1,
                        onset: start as f64 / rate,
                        release: j as f64 / rate,
                    });
                }
            } else {
                j += 1;
            }
        }
    }
    events.sort_by(|a, b| a.onset.total_cmp(&b.onset).then(a.finger.cmp(&b.finger)));
    Ok(events)
}

pub fn replay(probs: &[[f64; FINGERS]], rate: f64, task: Task, cfg: &ReplayConfig) -> Result<ReplayOutput> {
    let events = extract_events(probs, rate, cfg)?;
    let (text, notes) = match task {
        Task::Typing => (Some(events.iter().map(|e| cfg.keys[usize::from(e.finger) - 1].as_str()).collect()), None),
        Task::Piano => (
            None,
            Some(
                events
                    .iter()
                    .map(|e| NoteEvent { note: cfg.notes[usize::from(e.finger) - 1], onset: e.onset, release: e.release })
                    .collect(),
            ),
        ),
    };
    Ok(ReplayOutput { events, text, notes })
}

/// `T` frames of {0, 1} probabilities from an event stream.
pub fn rasterize(events: &[PressEvent], frames: usize, rate: f64) -> Vec<[f64; FINGERS]> {
    (0..frames)
        .map(|j| press_vector_at(j as f64 / rate, events).map(f64::from))
        .collect()
}

fn ticks_per_second() -> f64 {
    f64::from(MIDI_DIVISION) * 1e6 / f64::from(MIDI_TEMPO)
}

fn push_vlq(out: &mut Vec<u8>, mut v: u32) {
    let mut buf = [0u8; 5];
    let mut n = 0;
    loop {
        buf[n] = (v & 0x7f) as u8;
        n += 1;
        v >>= 7;
        if v == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        out.push(buf[i] | if i > 0 { 0x80 } else { 0 });
    }
}

/// Format-0 Standard MIDI File, 480 ticks per quarter at 120 bpm.
pub fn write_midi(notes: &[NoteEvent]) -> Vec<u8> {
    let tps = ticks_per_second();
    // (tick, order, status, note, velocity): note-offs sort before note-ons
    let mut msgs: Vec<(u32, u8, u8, u8, u8)> = Vec::new();
    for n in notes {
        let on = (n.onset * tps).round().max(0.0) as u32;
        let off = ((n.release * tps).round() as u32).max(on + 1);
        msgs.push((on, 1, 0x90, n.note, 64));
        msgs.push((off, 0, 0x80, n.note, 0));
    }
    msgs.sort();
    let mut track = Vec::new();
    push_vlq(&mut track, 0);
    track.extend_from_slice(&[0xff, 0x51, 0x03]);
    track.extend_from_slice(&MIDI_TEMPO.to_be_bytes()[1..]);
    let mut last = 0;
    for (tick, _, status, note, vel) in msgs {
        push_vlq(&mut track, tick - last);
        last = tick;
        track.extend_from_slice(&[status, note, vel]);
    }
    push_vlq(&mut track, 0);
    track.extend_from_slice(&[0xff, 0x2f, 0x00]);

    let mut out = Vec::new();
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&MIDI_DIVISION.to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(track.len() as u32).to_be_bytes());
    out.extend_from_slice(&track);
    out
}

/// Note events (tick resolution) of a single-track file, times in seconds.
pub fn parse_midi(bytes: &[u8]) -> Result<Vec<NoteEvent>> {
    let fail = |offset: usize, detail: &str| Error::Format { offset: offset as u64, detail: detail.into() };
    let need = |pos: usize, n: usize| if pos + n <= bytes.len() { Ok(()) } else { Err(fail(pos, "truncated")) };
    need(0, 14)?;
    if &bytes[0..4] != b"MThd" {
        return Err(fail(0, "missing MThd"));
    }
    let division = u16::from_be_bytes([bytes[12], bytes[13]]);
    if division & 0x8000 != 0 || division == 0 {
        return Err(fail(12, "only metrical time division is supported"));
    }
    let header_len = u32::from_be_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let mut pos = 8 + header_len;
    need(pos, 8)?;
    if &bytes[pos..pos + 4] != b"MTrk" {
        return Err(fail(pos, "missing MTrk"));
    }
    let len = u32::from_be_bytes(bytes[pos + 4..pos + 8].try_into().expect("4 bytes")) as usize;
    pos += 8;
    need(pos, len)?;
    let end = pos + len;

    let mut tempo = 500_000.0;
    let mut seconds = 0.0;
    let mut running = 0u8;
    let mut open: Vec<(u8, f64)> = Vec::new();
    let mut notes = Vec::new();
    let read_vlq = |pos: &mut usize| -> Result<u32> {
        let mut v = 0u32;
        for _ in 0..4 {
            if *pos >= end {
                return Err(fail(*pos, "truncated variable-length quantity"));
            }
            let b = bytes[*pos];
            *pos += 1;
            v = (v << 7) | u32::from(b & 0x7f);
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(fail(*pos, "variable-length quantity too long"))
    };
    while pos < end {
        let delta = read_vlq(&mut pos)?;
        seconds += f64::from(delta) * tempo / 1e6 / f64::from(division);
        need(pos, 1)?;
        let mut status = bytes[pos];
        if status & 0x80 != 0 {
            pos += 1;
            if status < 0xf0 {
                running = status;
            }
        } else {
            status = running;
            if status == 0 {
                return Err(fail(pos, "data byte without running status"));
            }
        }
        match status {
            0xff => {
                need(pos, 1)?;
                let kind = bytes[pos];
                pos += 1;
                let l = read_vlq(&mut pos)? as usize;
                need(pos, l)?;
                if kind == 0x51 && l == 3 {
                    tempo = f64::from(u32::from_be_bytes([0, bytes[pos], bytes[pos + 1], bytes[pos + 2]]));
                }
                pos += l;
                if kind == 0x2f {
                    break;
                }
            }
            0xf0 | 0xf7 => {
                let l = read_vlq(&mut pos)? as usize;
                pos += l;
            }
            s => {
                let data_len = if matches!(s & 0xf0, 0xc0 | 0xd0) { 1 } else { 2 };
                need(pos, data_len)?;
                let (note, vel) = (bytes[pos], if data_len == 2 { bytes[pos + 1] } else { 0 });
                pos += data_len;
                let off = s & 0xf0 == 0x80 || (s & 0xf0 == 0x90 && vel == 0);
                if s & 0xf0 == 0x90 && vel > 0 {
                    open.push((note, seconds));
                } else if off {
                    if let Some(i) = open.iter().position(|(n, _)| *n == note) {
                        let (_, onset) = open.remove(i);
                        notes.push(NoteEvent { note, onset, release: seconds });
                    }
                }
            }
        }
    }
    notes.sort_by(|a, b| a.onset.total_cmp(&b.onset).then(a.note.cmp(&b.note)));
    Ok(notes)
}

/// Delimited event table `finger,onset_s,release_s,label`.
pub fn events_table(out: &ReplayOutput, cfg: &ReplayConfig) -> String {
    let mut s = String::from("finger,onset_s,release_s,label\n");
    for e in &out.events {
        let f = usize::from(e.finger) - 1;
        let label = if out.notes.is_some() { cfg.notes[f].to_string() } else { format!("{:?}", cfg.keys[f]) };
        s.push_str(&format!("{},{},{},{}\n", e.finger, e.onset, e.release, label));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_finger(p: &[f64]) -> Vec<[f64; FINGERS]> {
        p.iter().map(|&v| [0.0, 0.0, v, 0.0, 0.0]).collect()
    }

    #[test]
    fn single_run() {
        let ev = extract_events(&one_finger(&[0.1, 0.9, 0.9, 0.1]), 20.0, &ReplayConfig::default()).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].finger, 3);
        assert!((ev[0].onset - 0.05).abs() < 1e-12 && (ev[0].release - 0.15).abs() < 1e-12);
    }

    #[test]
    fn gaps_of_one_frame_close() {
        let ev = extract_events(&one_finger(&[0.9, 0.2, 0.9, 0.1, 0.1, 0.9]), 20.0, &ReplayConfig::default()).unwrap();
        assert_eq!(ev.len(), 2);
        assert_eq!(ev[0].release, 0.15);
    }

    #[test]
    fn nothing_above_threshold() {
        let out = replay(&one_finger(&[0.1, 0.49, 0.2]), 20.0, Task::Typing, &ReplayConfig::default()).unwrap();
        assert!(out.events.is_empty());
        assert_eq!(out.text.as_deref(), Some(""));
    }

    #[test]
    fn typing_text_and_piano_notes() {
        let events = vec![
            PressEvent { finger: 2, onset: 0.1, release: 0.2 },
            PressEvent { finger: 1, onset: 0.5, release: 0.6 },
            PressEvent { finger: 5, onset: 0.8, release: 0.9 },
        ];
        let probs = rasterize(&events, 30, 20.0);
        let cfg = ReplayConfig::default();
        let typed = replay(&probs, 20.0, Task::Typing, &cfg).unwrap();
        assert_eq!(typed.text.as_deref(), Some("j ;"));
        let played = replay(&probs, 20.0, Task::Piano, &cfg).unwrap();
        let notes: Vec<u8> = played.notes.unwrap().iter().map(|n| n.note).collect();
        assert_eq!(notes, vec![62, 60, 67]);
    }

    #[test]
    fn midi_round_trip() {
        let notes = vec![
            NoteEvent { note: 60, onset: 0.0, release: 0.5 },
            NoteEvent { note: 64, onset: 0.25, release: 1.0 },
            NoteEvent { note: 60, onset: 0.5, release: 0.75 },
        ];
        let bytes = write_midi(&notes);
        assert_eq!(&bytes[8..14], &[0, 0, 0, 1, 0x01, 0xe0]);
        let back = parse_midi(&bytes).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in notes.iter().zip(&back) {
            assert_eq!(a.note, b.note);
            assert!((a.onset - b.onset).abs() <= 1.0 / 960.0);
            assert!((a.release - b.release).abs() <= 1.0 / 960.0);
        }
        assert!(parse_midi(&bytes[..20]).is_err());
    }

    #[test]
    fn vlq_encoding() {
        for (v, enc) in [(0u32, vec![0u8]), (0x7f, vec![0x7f]), (0x80, vec![0x81, 0x00]), (0x3fff, vec![0xff, 0x7f])] {
            let mut out = Vec::new();
            push_vlq(&mut out, v);
            assert_eq!(out, enc);
        }
    }
}
