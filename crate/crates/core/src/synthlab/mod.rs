//! Seeded synthetic "subject lab": press scripts, joint trajectories,
//! consistent marker frames and ultrasound-like images.

mod hand;
mod render;

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use hand::{markers_from_config, random_configuration, wrist_realizable, HandGeometry};
pub use render::{band_parameters, joint_drives, render_frame, SubjectPhenotype, BANDS};

use crate::datapipe::{align_all, write_session_dir, Dataset, GrayImage, PressEvent, PressEventStream, PressVector, Session, Task};
use crate::error::{Error, Result};
use crate::kinematics::{finger_joint, AnchorTable, Configuration, THUMB_BEND, THUMB_PRESS, WRIST_PITCH, WRIST_ROLL, WRIST_YAW};
use crate::netspec::FINGERS;

/// Every invented constant of the generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Time constant of the critically damped joint response, seconds.
    pub tau: f64,
    /// A finger is pressed while its first joint is this far below rest, radians.
    pub press_offset: f64,
    /// Flexion depth of a piano press at the first joint, radians.
    pub piano_depth: f64,
    /// Typing depth as a fraction of the piano depth.
    pub typing_depth_ratio: f64,
    /// Relative per-press variation of the depth.
    pub depth_jitter: f64,
    /// Fraction of a press that leaks into the neighbouring fingers.
    pub coupling: f64,
    pub typing_duration: (f64, f64),
    pub typing_gap: (f64, f64),
    pub piano_duration: (f64, f64),
    pub piano_interval: (f64, f64),
    /// Wrist drift amplitude while typing, radians; piano uses three times this.
    pub wrist_drift: f64,
    /// Speckle scale of the renderer.
    pub sigma: f64,
    /// Maximum per-session vertical shift of the bands (probe placement).
    pub placement_jitter: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            tau: 0.06,
            press_offset: 0.2,
            piano_depth: 0.9,
            typing_depth_ratio: 0.7,
            depth_jitter: 0.15,
            coupling: 0.12,
            typing_duration: (0.08, 0.15),
            typing_gap: (0.2, 0.9),
            piano_duration: (0.2, 0.6),
            piano_interval: (0.1, 1.23),
            wrist_drift: 0.05,
            sigma: 0.35,
            placement_jitter: 0.015,
        }
    }
}

/// Press intents of one session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionScript {
    pub task: Task,
    pub duration: f64,
    pub intents: Vec<PressEvent>,
}

fn mix(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over a combined word
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Random press intents: typing never overlaps, piano holds at most two
/// keys. About 1.5 presses per second either way.
pub fn gen_motion_script(task: Task, duration: f64, seed: u64, cfg: &SynthConfig) -> Result<MotionScript> {
    if !(duration > 0.0) {
        return Err(Error::invalid("duration must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut intents = Vec::new();
    let end = duration - 0.2;
    match task {
        Task::Typing => {
            let mut t = rng.gen_range(0.2..0.5);
            loop {
                let d = rng.gen_range(cfg.typing_duration.0..=cfg.typing_duration.1);
                if t + d > end {
                    break;
                }
                intents.push(PressEvent { finger: rng.gen_range(1..=FINGERS as u8), onset: t, release: t + d });
                t += d + rng.gen_range(cfg.typing_gap.0..=cfg.typing_gap.1);
            }
        }
        Task::Piano => {
            let mut t = rng.gen_range(0.2..0.5);
            loop {
                let active: Vec<&PressEvent> = intents.iter().filter(|e| e.release > t).collect();
                if active.len() >= 2 {
                    t = active.iter().map(|e| e.release).fold(f64::INFINITY, f64::min);
                    continue;
                }
                let d = rng.gen_range(cfg.piano_duration.0..=cfg.piano_duration.1);
                if t + d > end {
                    break;
                }
                let free: Vec<u8> = (1..=FINGERS as u8).filter(|f| active.iter().all(|e| e.finger != *f)).collect();
                let finger = free[rng.gen_range(0..free.len())];
                intents.push(PressEvent { finger, onset: t, release: t + d });
                t += rng.gen_range(cfg.piano_interval.0..=cfg.piano_interval.1);
            }
        }
    }
    Ok(MotionScript { task, duration, intents })
}

/// Frame-sampled output of the joint simulation.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub configs: Vec<Configuration>,
    pub press: Vec<PressVector>,
    /// Press events recovered from the threshold crossings at frame resolution.
    pub events: Vec<PressEvent>,
}

/// Joints driven by finger `f` (1 = thumb), with rest angle and the share of
/// the press depth each one flexes by.
fn finger_joints(f: usize) -> Vec<(usize, f64, f64)> {
    if f == 1 {
        vec![(THUMB_PRESS, FRAC_PI_2, 0.8), (THUMB_BEND, PI, 0.6)]
    } else {
        let r = f - 1;
        vec![(finger_joint(r, 1), PI, 1.0), (finger_joint(r, 2), PI, 1.1), (finger_joint(r, 3), 0.95 * PI, 0.8)]
    }
}

/// Resting pose of the simulated hand: straight rays with slightly bent
/// distal joints, thumb in the palm plane, neutral wrist.
pub fn resting_pose() -> Configuration {
    let mut x = Configuration::rest();
    for f in 1..=FINGERS {
        for (j, rest, _) in finger_joints(f) {
            x.0[j] = rest;
        }
    }
    x
}

/// Rest angle of the joint whose threshold defines a press of finger `f`.
pub fn press_joint(f: usize) -> (usize, f64) {
    let (j, rest, _) = finger_joints(f)[0];
    (j, rest)
}

/// Critically damped response over `dt` towards a fixed target.
fn damped_step(x: f64, v: f64, target: f64, dt: f64, tau: f64) -> (f64, f64) {
    let y0 = x - target;
    let e = (-dt / tau).exp();
    let c = v + y0 / tau;
    (target + (y0 + c * dt) * e, (v - c * dt / tau) * e)
}

/// Simulates joint angles at `frame_rate` and derives press labels by
/// thresholding each finger's first joint.
pub fn joints_from_script(script: &MotionScript, frame_rate: f64, seed: u64, cfg: &SynthConfig) -> Result<Trajectory> {
    if !(15.0..=30.0).contains(&frame_rate) {
        return Err(Error::invalid(format!("frame rate {frame_rate} outside [15, 30]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth_scale = match script.task {
        Task::Piano => 1.0,
        Task::Typing => cfg.typing_depth_ratio,
    };
    let depths: Vec<f64> = script
        .intents
        .iter()
        .map(|_| cfg.piano_depth * depth_scale * (1.0 + cfg.depth_jitter * rng.gen_range(-1.0..=1.0)))
        .collect();
    let drift_amp = match script.task {
        Task::Typing => cfg.wrist_drift,
        Task::Piano => 3.0 * cfg.wrist_drift,
    };
    let drift: Vec<[f64; 4]> = (0..3)
        .map(|_| [rng.gen_range(0.02..0.1), rng.gen_range(0.0..TAU), rng.gen_range(0.02..0.1), rng.gen_range(0.0..TAU)])
        .collect();

    let frame_count = (script.duration * frame_rate).round() as usize;
    let times: Vec<f64> = (0..frame_count).map(|j| j as f64 / frame_rate).collect();
    let mut breaks: Vec<f64> = script.intents.iter().flat_map(|e| [e.onset, e.release]).collect();
    breaks.sort_by(f64::total_cmp);

    // flexion demanded from each finger at time t
    let demand = |t: f64| -> [f64; FINGERS] {
        let mut own = [0.0; FINGERS];
        for (e, d) in script.intents.iter().zip(&depths) {
            if e.onset <= t && t < e.release {
                own[usize::from(e.finger) - 1] += d;
            }
        }
        std::array::from_fn(|i| {
            let mut v = own[i];
            if i >= 1 {
                for n in [i - 1, i + 1] {
                    if (1..FINGERS).contains(&n) {
                        v += cfg.coupling * own[n];
                    }
                }
            }
            v
        })
    };

    let mut state = resting_pose();
    let mut vel = [0.0; 17];
    let advance = |state: &mut Configuration, vel: &mut [f64; 17], from: f64, to: f64| {
        if to <= from {
            return;
        }
        let d = demand(0.5 * (from + to));
        for f in 1..=FINGERS {
            for (j, rest, share) in finger_joints(f) {
                let target = (rest - share * d[f - 1]).max(0.0);
                let (x, v) = damped_step(state.0[j], vel[j], target, to - from, cfg.tau);
                state.0[j] = x.clamp(0.0, PI);
                vel[j] = v;
            }
        }
    };

    let mut configs = Vec::with_capacity(frame_count);
    let mut press = Vec::with_capacity(frame_count);
    let mut now = 0.0;
    let mut b = 0;
    for &t in &times {
        while b < breaks.len() && breaks[b] <= t {
            advance(&mut state, &mut vel, now, breaks[b]);
            now = now.max(breaks[b]);
            b += 1;
        }
        advance(&mut state, &mut vel, now, t);
        now = t;
        let mut x = state;
        for (k, joint) in [WRIST_ROLL, WRIST_PITCH, WRIST_YAW].into_iter().enumerate() {
            let [f1, p1, f2, p2] = drift[k];
            x.0[joint] = FRAC_PI_2 + drift_amp * (0.6 * (TAU * f1 * t + p1).sin() + 0.4 * (TAU * f2 * t + p2).sin());
        }
        let p: PressVector = std::array::from_fn(|i| {
            let (j, rest) = press_joint(i + 1);
            u8::from(x.0[j] < rest - cfg.press_offset)
        });
        configs.push(x);
        press.push(p);
    }

    let events = events_from_labels(&press, &times, 1.0 / frame_rate);
    Ok(Trajectory { times, configs, press, events })
}

/// Maximal runs of set bits as events: onset at the first frame, release at
/// the first frame after the run.
pub fn events_from_labels(press: &[PressVector], times: &[f64], period: f64) -> Vec<PressEvent> {
    let mut events = Vec::new();
    for f in 0..FINGERS {
        let mut start = None;
        for (j, p) in press.iter().enumerate() {
            match (p[f] == 1, start) {
                (true, None) => start = Some(j),
                (false, Some(s)) => {
                    events.push(PressEvent { finger: f as u8 + 1, onset: times[s], release: times[j] });
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            let last = *times.last().expect("non-empty run");
            events.push(PressEvent { finger: f as u8 + 1, onset: times[s], release: last + period });
        }
    }
    events.sort_by(|a, b| a.onset.total_cmp(&b.onset).then(a.finger.cmp(&b.finger)));
    events
}

fn random_rotation<R: Rng>(rng: &mut R) -> [[f64; 3]; 3] {
    // uniform unit quaternion
    let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (w, x, y, z) = (a * (TAU * u2).sin(), a * (TAU * u2).cos(), b * (TAU * u3).sin(), b * (TAU * u3).cos());
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
        [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
        [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Rigid transform drawn uniformly over rotations, translation within ±200 mm.
pub fn random_rigid<R: Rng>(rng: &mut R) -> ([[f64; 3]; 3], [f64; 3]) {
    let r = random_rotation(rng);
    let t = std::array::from_fn(|_| rng.gen_range(-200.0..200.0));
    (r, t)
}

/// Hand proportions of one subject.
pub fn subject_geometry(subject_seed: u64) -> HandGeometry {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(subject_seed, 0x6e0));
    let s = rng.gen_range(0.9..1.1);
    let mut g = HandGeometry::default();
    for seg in g.segments.iter_mut().flatten() {
        *seg *= s * rng.gen_range(0.95..1.05);
    }
    for l in g.thumb_segments.iter_mut() {
        *l *= s;
    }
    g.ray_spacing *= s;
    g
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionParams {
    pub task: Task,
    pub subject: usize,
    pub subject_seed: u64,
    pub session_index: usize,
    pub duration: f64,
    pub frame_rate: f64,
    pub side: usize,
}

pub fn session_id(subject: usize, task: Task, index: usize) -> String {
    format!("s{subject:02}-{}-{index}", task.label())
}

/// One complete session with perfectly aligned image, marker and press streams.
pub fn gen_session(p: &SessionParams, cfg: &SynthConfig) -> Result<Session> {
    let task_code = match p.task {
        Task::Piano => 1,
        Task::Typing => 2,
    };
    let seed = mix(mix(p.subject_seed, task_code), p.session_index as u64 + 1);
    let script = gen_motion_script(p.task, p.duration, mix(seed, 1), cfg)?;
    let traj = joints_from_script(&script, p.frame_rate, mix(seed, 2), cfg)?;
    let phenotype = SubjectPhenotype::from_seed(p.subject_seed, cfg.sigma);
    phenotype.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 3));
    let shift = rng.gen_range(-cfg.placement_jitter..=cfg.placement_jitter);
    let mut geometry = subject_geometry(p.subject_seed);
    (geometry.rotation, geometry.translation) = random_rigid(&mut rng);

    let mut images = Vec::with_capacity(traj.times.len());
    let mut markers = Vec::with_capacity(traj.times.len());
    for (&t, x) in traj.times.iter().zip(&traj.configs) {
        let img = render_frame(x, &phenotype, shift, p.side, &mut rng)?;
        let pixels = img.iter().map(|v| (v * 255.0).round() as u8).collect();
        images.push((t, GrayImage::new(p.side, p.side, pixels)?));
        markers.push(markers_from_config(x, &geometry, t)?);
    }
    Ok(Session {
        id: session_id(p.subject, p.task, p.session_index),
        subject: format!("s{:02}", p.subject),
        task: p.task,
        frame_rate: p.frame_rate,
        images,
        events: PressEventStream { task: p.task, events: traj.events },
        markers,
    })
}

/// Shape of a synthetic corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub subjects: usize,
    pub sessions_per_task: usize,
    pub tasks: Vec<Task>,
    pub duration: f64,
    pub frame_rate: f64,
    pub side: usize,
    pub seed: u64,
    pub synth: SynthConfig,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            subjects: 4,
            sessions_per_task: 2,
            tasks: vec![Task::Piano, Task::Typing],
            duration: 90.0,
            frame_rate: 20.0,
            side: 64,
            seed: 0,
            synth: SynthConfig::default(),
        }
    }
}

impl CorpusSpec {
    pub fn sessions(&self) -> Vec<SessionParams> {
        let mut out = Vec::new();
        for subject in 0..self.subjects {
            for &task in &self.tasks {
                for session_index in 0..self.sessions_per_task {
                    out.push(SessionParams {
                        task,
                        subject,
                        subject_seed: mix(self.seed, subject as u64 + 1),
                        session_index,
                        duration: self.duration,
                        frame_rate: self.frame_rate,
                        side: self.side,
                    });
                }
            }
        }
        out
    }
}

/// Generates every session of `spec` in parallel, in a fixed order.
pub fn gen_corpus(spec: &CorpusSpec) -> Result<Vec<Session>> {
    spec.sessions().par_iter().map(|p| gen_session(p, &spec.synth)).collect()
}

/// Generates, aligns (default anchors) and windows a corpus in one go.
pub fn synth_dataset(spec: &CorpusSpec, k: usize, stride: usize) -> Result<Dataset> {
    let sessions = gen_corpus(spec)?;
    let aligned = align_all(&sessions, spec.side, &AnchorTable::default())?;
    Dataset::from_sessions(aligned.into_iter().map(|(a, _)| a).collect(), k, stride)
}

/// Writes each session to `<dir>/<session id>/`.
pub fn write_corpus(dir: &Path, sessions: &[Session]) -> Result<()> {
    sessions.par_iter().try_for_each(|s| write_session_dir(&dir.join(&s.id), s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::press_vector_at;

    #[test]
    fn typing_scripts_never_overlap() {
        let cfg = SynthConfig::default();
        let s = gen_motion_script(Task::Typing, 90.0, 4, &cfg).unwrap();
        for pair in s.intents.windows(2) {
            assert!(pair[0].release <= pair[1].onset);
        }
        for e in &s.intents {
            let d = e.release - e.onset;
            assert!((0.08..=0.15 + 1e-12).contains(&d));
        }
        let rate = s.intents.len() as f64 / 90.0;
        assert!((1.2..1.8).contains(&rate), "rate {rate}");
        assert_eq!(s, gen_motion_script(Task::Typing, 90.0, 4, &cfg).unwrap());
    }

    #[test]
    fn piano_scripts_hold_at_most_two() {
        let s = gen_motion_script(Task::Piano, 90.0, 8, &SynthConfig::default()).unwrap();
        for e in &s.intents {
            let t = e.onset;
            let live = s.intents.iter().filter(|o| o.onset <= t && t < o.release).count();
            assert!(live <= 2);
            let same = s.intents.iter().filter(|o| o.finger == e.finger && o.onset <= t && t < o.release).count();
            assert_eq!(same, 1);
        }
        let rate = s.intents.len() as f64 / 90.0;
        assert!((1.1..1.8).contains(&rate), "rate {rate}");
    }

    #[test]
    fn empty_script_rests() {
        let script = MotionScript { task: Task::Typing, duration: 2.0, intents: vec![] };
        let t = joints_from_script(&script, 20.0, 0, &SynthConfig::default()).unwrap();
        assert_eq!(t.times.len(), 40);
        assert!(t.press.iter().all(|p| *p == [0; 5]));
        for x in &t.configs {
            for j in 0..14 {
                assert_eq!(x.0[j], resting_pose().0[j]);
            }
        }
        assert!(t.events.is_empty());
    }

    #[test]
    fn single_press_is_one_contiguous_run() {
        let script = MotionScript {
            task: Task::Piano,
            duration: 3.0,
            intents: vec![PressEvent { finger: 3, onset: 1.0, release: 1.4 }],
        };
        let t = joints_from_script(&script, 20.0, 0, &SynthConfig::default()).unwrap();
        let on: Vec<usize> = (0..t.press.len()).filter(|&j| t.press[j][2] == 1).collect();
        assert!(!on.is_empty());
        assert_eq!(on.len(), on.last().unwrap() - on[0] + 1);
        assert!(t.press.iter().all(|p| p[0] == 0 && p[1] == 0 && p[3] == 0 && p[4] == 0));
    }

    #[test]
    fn labels_match_emitted_events() {
        let cfg = SynthConfig::default();
        for task in [Task::Piano, Task::Typing] {
            let s = gen_motion_script(task, 30.0, 2, &cfg).unwrap();
            let t = joints_from_script(&s, 20.0, 3, &cfg).unwrap();
            for (time, p) in t.times.iter().zip(&t.press) {
                assert_eq!(press_vector_at(*time, &t.events), *p);
            }
            assert!(t.press.iter().any(|p| p.iter().any(|&b| b == 1)));
        }
    }

    #[test]
    fn damped_step_matches_fine_integration() {
        let (x0, v0, g, tau) = (1.0, -3.0, 0.2, 0.06);
        let (x, v) = damped_step(x0, v0, g, 0.1, tau);
        let (mut xe, mut ve) = (x0, v0);
        let h = 1e-6;
        for _ in 0..100_000 {
            let a = -(xe - g) / (tau * tau) - 2.0 * ve / tau;
            ve += h * a;
            xe += h * ve;
        }
        assert!((x - xe).abs() < 1e-4 && (v - ve).abs() < 1e-3, "{x} {xe} {v} {ve}");
    }

    #[test]
    fn sessions_are_deterministic() {
        let p = SessionParams {
            task: Task::Typing,
            subject: 1,
            subject_seed: 77,
            session_index: 0,
            duration: 3.0,
            frame_rate: 20.0,
            side: 32,
        };
        let cfg = SynthConfig::default();
        let a = gen_session(&p, &cfg).unwrap();
        let b = gen_session(&p, &cfg).unwrap();
        assert_eq!(a.images, b.images);
        assert_eq!(a.markers, b.markers);
        assert_eq!(a.images.len(), 60);
        assert_eq!(a.id, "s01-typing-0");
    }
}
