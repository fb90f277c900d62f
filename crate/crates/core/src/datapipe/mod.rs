//! Stream alignment, windowing, session-grouped folds and dataset storage.

mod container;
mod formats;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use container::{load_dataset, save_dataset, MAGIC, VERSION};
pub use formats::{
    read_events, read_pgm, read_session_dir, write_events, write_pgm, write_session_dir, SessionManifest,
};

use crate::error::{Error, Result};
use crate::kinematics::{extract_configuration, normalize_configuration, AnchorTable, MarkerFrame, JOINT_COUNT};
use crate::netspec::FINGERS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Piano,
    Typing,
}

impl Task {
    pub fn label(self) -> &'static str {
        match self {
            Task::Piano => "piano",
            Task::Typing => "typing",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "piano" => Ok(Task::Piano),
            "typing" => Ok(Task::Typing),
            other => Err(Error::invalid(format!("unknown task `{other}`"))),
        }
    }
}

/// One press: finger 1 (thumb) to 5 (little), active on `[onset, release)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PressEvent {
    pub finger: u8,
    pub onset: f64,
    pub release: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PressEventStream {
    pub task: Task,
    pub events: Vec<PressEvent>,
}

impl PressEventStream {
    pub fn validate(&self) -> Result<()> {
        for e in &self.events {
            if !(1..=FINGERS as u8).contains(&e.finger) {
                return Err(Error::invalid(format!("finger {} outside 1..=5", e.finger)));
            }
            if !(e.onset < e.release) {
                return Err(Error::invalid(format!(
                    "event onset {} not before release {}",
                    e.onset, e.release
                )));
            }
        }
        if self.task == Task::Typing {
            let mut sorted = self.events.clone();
            sorted.sort_by(|a, b| a.onset.total_cmp(&b.onset));
            for pair in sorted.windows(2) {
                if pair[1].onset < pair[0].release {
                    return Err(Error::invalid(format!(
                        "typing events overlap at {}",
                        pair[1].onset
                    )));
                }
            }
        }
        Ok(())
    }
}

pub type PressVector = [u8; FINGERS];

/// Bit `i` is set iff some event of finger `i + 1` satisfies `onset ≤ t < release`.
pub fn press_vector_at(t: f64, events: &[PressEvent]) -> PressVector {
    let mut p = [0u8; FINGERS];
    for e in events {
        if e.onset <= t && t < e.release {
            p[usize::from(e.finger) - 1] = 1;
        }
    }
    p
}

/// 8-bit grayscale image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::shape(format!(
                "{} pixels for a {width}×{height} image",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    /// Area-averaging resample to `side × side`, rounded back to 8 bits.
    pub fn resample(&self, side: usize) -> GrayImage {
        if self.width == side && self.height == side {
            return self.clone();
        }
        let sx = self.width as f64 / side as f64;
        let sy = self.height as f64 / side as f64;
        let mut out = Vec::with_capacity(side * side);
        for oy in 0..side {
            let (y0, y1) = (oy as f64 * sy, (oy + 1) as f64 * sy);
            for ox in 0..side {
                let (x0, x1) = (ox as f64 * sx, (ox + 1) as f64 * sx);
                let mut acc = 0.0;
                for iy in y0.floor() as usize..(y1.ceil() as usize).min(self.height) {
                    let wy = (y1.min(iy as f64 + 1.0) - y0.max(iy as f64)).max(0.0);
                    for ix in x0.floor() as usize..(x1.ceil() as usize).min(self.width) {
                        let wx = (x1.min(ix as f64 + 1.0) - x0.max(ix as f64)).max(0.0);
                        acc += wx * wy * f64::from(self.pixels[iy * self.width + ix]);
                    }
                }
                out.push((acc / (sx * sy)).round().clamp(0.0, 255.0) as u8);
            }
        }
        GrayImage {
            width: side,
            height: side,
            pixels: out,
        }
    }
}

/// One recording: timestamped frames, press events and marker frames.
#[derive(Clone, Debug)]
pub struct Session {
    pub id: String,
    pub subject: String,
    pub task: Task,
    pub frame_rate: f64,
    pub images: Vec<(f64, GrayImage)>,
    pub events: PressEventStream,
    pub markers: Vec<MarkerFrame>,
}

impl Session {
    pub fn validate(&self) -> Result<()> {
        if !(15.0..=30.0).contains(&self.frame_rate) {
            return Err(Error::invalid(format!(
                "frame rate {} outside [15, 30]",
                self.frame_rate
            )));
        }
        for pair in self.images.windows(2) {
            if !(pair[0].0 < pair[1].0) {
                return Err(Error::invalid(format!(
                    "session {}: image timestamps not increasing at {}",
                    self.id, pair[1].0
                )));
            }
        }
        self.events.validate()
    }
}

/// Frames of one session after alignment: images at the dataset side
/// (8-bit, scaled by 1/255 on use), normalized configurations and press bits.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedSession {
    pub id: String,
    pub subject: String,
    pub task: Task,
    pub frame_rate: f64,
    pub side: usize,
    pub times: Vec<f64>,
    pub images: Vec<Vec<u8>>,
    pub configs: Vec<[f64; JOINT_COUNT]>,
    pub press: Vec<PressVector>,
}

impl AlignedSession {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Pixel values of frame `i` in `[0, 1]`.
    pub fn image_f64(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        self.images[i].iter().map(|&v| f64::from(v) / 255.0)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub kept: usize,
    /// No marker frame within half a frame period.
    pub dropped_unmatched: usize,
    /// Matched marker frame was incomplete or degenerate.
    pub dropped_degenerate: usize,
    /// Indices into the marker stream, one per kept frame.
    pub marker_indices: Vec<usize>,
}

/// Matches every image to its nearest marker frame within half a frame
/// period and attaches press vectors.
pub fn align(session: &Session, side: usize, anchors: &AnchorTable) -> Result<(AlignedSession, IngestReport)> {
    session.validate()?;
    if side == 0 {
        return Err(Error::invalid("image side must be positive"));
    }
    let tolerance = 0.5 / session.frame_rate;
    let markers = &session.markers;
    let mut report = IngestReport::default();
    let mut out = AlignedSession {
        id: session.id.clone(),
        subject: session.subject.clone(),
        task: session.task,
        frame_rate: session.frame_rate,
        side,
        times: Vec::new(),
        images: Vec::new(),
        configs: Vec::new(),
        press: Vec::new(),
    };
    let mut j = 0;
    for (t, image) in &session.images {
        while j + 1 < markers.len() && (markers[j + 1].time - t).abs() <= (markers[j].time - t).abs() {
            j += 1;
        }
        if markers.is_empty() || (markers[j].time - t).abs() > tolerance + 1e-12 {
            report.dropped_unmatched += 1;
            continue;
        }
        let config = match extract_configuration(&markers[j], anchors).and_then(|c| normalize_configuration(&c)) {
            Ok(c) => c,
            Err(_) => {
                report.dropped_degenerate += 1;
                continue;
            }
        };
        out.times.push(*t);
        out.images.push(image.resample(side).pixels);
        out.configs.push(config);
        out.press.push(press_vector_at(*t, &session.events.events));
        report.marker_indices.push(j);
    }
    report.kept = out.len();
    if out.is_empty() {
        return Err(Error::Empty(format!(
            "session {}: no image overlaps the marker stream",
            session.id
        )));
    }
    Ok((out, report))
}

/// Aligns many sessions in parallel, preserving input order.
pub fn align_all(sessions: &[Session], side: usize, anchors: &AnchorTable) -> Result<Vec<(AlignedSession, IngestReport)>> {
    sessions.par_iter().map(|s| align(s, side, anchors)).collect()
}

/// A window `[start, start + k)` of one aligned session.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WindowRef {
    pub session: usize,
    pub start: usize,
}

/// Start offsets `0, stride, 2·stride, …` of every full window.
pub fn build_windows(frame_count: usize, k: usize, stride: usize) -> Result<Vec<usize>> {
    if k == 0 || stride == 0 {
        return Err(Error::invalid("k and stride must be at least 1"));
    }
    if frame_count < k {
        return Ok(Vec::new());
    }
    Ok((0..=frame_count - k).step_by(stride).collect())
}

/// Materialized training sample.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowedSample {
    pub session_id: String,
    pub start: usize,
    pub times: Vec<f64>,
    /// `k` images of `side²` values in `[0, 1]`.
    pub images: Vec<Vec<f64>>,
    pub configs: Vec<[f64; JOINT_COUNT]>,
    pub press: Vec<PressVector>,
}

/// Aligned sessions plus the windows cut from them.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub k: usize,
    pub side: usize,
    pub sessions: Vec<AlignedSession>,
    pub windows: Vec<WindowRef>,
}

impl Dataset {
    /// Cuts windows of length `k` (never crossing sessions) with the given stride.
    pub fn from_sessions(sessions: Vec<AlignedSession>, k: usize, stride: usize) -> Result<Self> {
        let side = sessions.first().map_or(0, |s| s.side);
        if let Some(s) = sessions.iter().find(|s| s.side != side) {
            return Err(Error::shape(format!("session {} has side {} not {side}", s.id, s.side)));
        }
        let mut windows = Vec::new();
        for (i, s) in sessions.iter().enumerate() {
            for start in build_windows(s.len(), k, stride)? {
                windows.push(WindowRef { session: i, start });
            }
        }
        Ok(Self {
            k,
            side,
            sessions,
            windows,
        })
    }

    /// Same sessions, windows recut at another length.
    pub fn rewindow(&self, k: usize, stride: usize) -> Result<Self> {
        Self::from_sessions(self.sessions.clone(), k, stride)
    }

    pub fn sample(&self, w: WindowRef) -> WindowedSample {
        let s = &self.sessions[w.session];
        let r = w.start..w.start + self.k;
        WindowedSample {
            session_id: s.id.clone(),
            start: w.start,
            times: s.times[r.clone()].to_vec(),
            images: r.clone().map(|i| s.image_f64(i).collect()).collect(),
            configs: s.configs[r.clone()].to_vec(),
            press: s.press[r].to_vec(),
        }
    }

    pub fn session_index(&self, id: &str) -> Option<usize> {
        self.sessions.iter().position(|s| s.id == id)
    }

    /// Window count per session id.
    pub fn window_counts(&self) -> BTreeMap<String, usize> {
        let mut counts: BTreeMap<String, usize> = self.sessions.iter().map(|s| (s.id.clone(), 0)).collect();
        for w in &self.windows {
            *counts.get_mut(&self.sessions[w.session].id).expect("known session") += 1;
        }
        counts
    }

    /// Windows whose session id is in `ids`.
    pub fn windows_of(&self, ids: &[String]) -> Vec<WindowRef> {
        self.windows
            .iter()
            .copied()
            .filter(|w| ids.contains(&self.sessions[w.session].id))
            .collect()
    }
}

/// Disjoint groups of session ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Vec<String>>,
}

impl FoldPlan {
    pub fn test_sessions(&self, fold: usize) -> &[String] {
        &self.folds[fold]
    }

    pub fn train_sessions(&self, fold: usize) -> Vec<String> {
        self.folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != fold)
            .flat_map(|(_, f)| f.iter().cloned())
            .collect()
    }
}

/// Assigns whole sessions to `n_folds` folds: a seeded shuffle fixes the
/// order among equal sizes, then the largest remaining session goes to the
/// currently lightest fold.
pub fn split_folds(sessions: &[(String, usize)], n_folds: usize, seed: u64) -> Result<FoldPlan> {
    if n_folds == 0 {
        return Err(Error::invalid("need at least one fold"));
    }
    if sessions.len() < n_folds {
        return Err(Error::invalid(format!(
            "{} sessions cannot fill {n_folds} folds",
            sessions.len()
        )));
    }
    let mut order: Vec<&(String, usize)> = sessions.iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.sort_by(|a, b| b.1.cmp(&a.1));
    let mut folds = vec![Vec::new(); n_folds];
    let mut load = vec![0usize; n_folds];
    for (id, size) in order {
        let lightest = (0..n_folds).min_by_key(|&f| (load[f], f)).expect("n_folds > 0");
        folds[lightest].push(id.clone());
        load[lightest] += size;
    }
    Ok(FoldPlan { folds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::MARKER_LABELS;

    fn ev(finger: u8, onset: f64, release: f64) -> PressEvent {
        PressEvent { finger, onset, release }
    }

    #[test]
    fn press_vectors() {
        let events = [ev(3, 1.0, 2.0)];
        assert_eq!(press_vector_at(0.5, &events), [0; 5]);
        assert_eq!(press_vector_at(1.5, &events), [0, 0, 1, 0, 0]);
        assert_eq!(press_vector_at(2.0, &events), [0; 5]);
        let piano = [ev(2, 1.0, 3.0), ev(4, 2.0, 4.0)];
        assert_eq!(press_vector_at(2.5, &piano), [0, 1, 0, 1, 0]);
    }

    #[test]
    fn stream_validation() {
        let ok = PressEventStream { task: Task::Typing, events: vec![ev(1, 0.0, 1.0), ev(2, 1.0, 2.0)] };
        ok.validate().unwrap();
        let overlap = PressEventStream { task: Task::Typing, events: vec![ev(1, 0.0, 1.0), ev(2, 0.5, 2.0)] };
        assert!(overlap.validate().is_err());
        let piano = PressEventStream { task: Task::Piano, ..overlap };
        piano.validate().unwrap();
        let backwards = PressEventStream { task: Task::Piano, events: vec![ev(1, 2.0, 1.0)] };
        assert!(backwards.validate().is_err());
    }

    #[test]
    fn resample_averages_areas() {
        let img = GrayImage::new(4, 4, (0..16).map(|v| v as u8 * 10).collect()).unwrap();
        let r = img.resample(2);
        // top-left block 0,10,40,50 averages to 25
        assert_eq!(r.pixels, vec![25, 45, 105, 125]);
        let flat = GrayImage::new(7, 5, vec![255; 35]).unwrap();
        assert!(flat.resample(3).pixels.iter().all(|&v| v == 255));
    }

    fn marker_frame(time: f64) -> MarkerFrame {
        let mut f = MarkerFrame::empty(time);
        for (i, l) in MARKER_LABELS.iter().enumerate() {
            let a = i as f64;
            f.set(l, [a.sin() * 10.0, a.cos() * 7.0 + a, (a * 0.37).sin() * 5.0]).unwrap();
        }
        f
    }

    fn session(image_times: &[f64], marker_times: &[f64]) -> Session {
        Session {
            id: "s".into(),
            subject: "a".into(),
            task: Task::Piano,
            frame_rate: 20.0,
            images: image_times.iter().map(|&t| (t, GrayImage::new(2, 2, vec![255; 4]).unwrap())).collect(),
            events: PressEventStream { task: Task::Piano, events: vec![ev(5, 0.05, 0.1)] },
            markers: marker_times.iter().map(|&t| marker_frame(t)).collect(),
        }
    }

    #[test]
    fn align_matches_and_drops() {
        // frame period 0.05 s: 0.03 s = 0.6 periods away
        let s = session(&[0.0, 0.05, 0.13], &[0.0, 0.05, 0.10]);
        let (a, report) = align(&s, 2, &AnchorTable::default()).unwrap();
        assert_eq!(a.times, vec![0.0, 0.05]);
        assert_eq!(report.dropped_unmatched, 1);
        assert_eq!(report.marker_indices, vec![0, 1]);
        assert_eq!(a.press, vec![[0; 5], [0, 0, 0, 0, 1]]);
        assert!(a.image_f64(0).all(|v| v == 1.0));
    }

    #[test]
    fn align_rejects_disjoint_streams() {
        let s = session(&[0.0, 0.05], &[10.0]);
        assert!(matches!(align(&s, 2, &AnchorTable::default()), Err(Error::Empty(_))));
    }

    #[test]
    fn window_counts() {
        assert_eq!(build_windows(10, 8, 1).unwrap(), vec![0, 1, 2]);
        assert_eq!(build_windows(8, 8, 1).unwrap(), vec![0]);
        assert!(build_windows(7, 8, 1).unwrap().is_empty());
        assert_eq!(build_windows(10, 2, 4).unwrap(), vec![0, 4, 8]);
        assert!(build_windows(10, 0, 1).is_err());
    }

    fn sized(sizes: &[usize]) -> Vec<(String, usize)> {
        sizes.iter().enumerate().map(|(i, &n)| (format!("s{i}"), n)).collect()
    }

    #[test]
    fn folds_equal_sessions() {
        let plan = split_folds(&sized(&[4; 5]), 5, 1).unwrap();
        assert!(plan.folds.iter().all(|f| f.len() == 1));
    }

    #[test]
    fn folds_greedy_balance() {
        let sessions = sized(&[10, 9, 8, 7, 6, 5, 4, 3, 2, 1]);
        let plan = split_folds(&sessions, 5, 7).unwrap();
        let sizes: BTreeMap<_, _> = sessions.iter().cloned().collect();
        let loads: Vec<usize> = plan.folds.iter().map(|f| f.iter().map(|id| sizes[id]).sum()).collect();
        let (max, min) = (*loads.iter().max().unwrap(), *loads.iter().min().unwrap());
        assert!(max as f64 / min as f64 <= 1.5, "{loads:?}");
        assert_eq!(plan, split_folds(&sessions, 5, 7).unwrap());
        assert!(split_folds(&sized(&[1, 2]), 5, 0).is_err());
    }
}
