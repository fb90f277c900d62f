//! Hand configuration from labeled 3D markers.
//!
//! Every joint angle is the angle between two marker-to-marker vectors,
//! computed as `atan2(|u × v|, u · v)`. A fully extended finger therefore
//! reads π and flexion lowers the value.

mod io;

use serde::{Deserialize, Serialize};

pub use io::{read_configurations, read_markers, write_configurations, write_markers};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

/// Norm below which a vector (or twice a triangle area) counts as degenerate, in mm.
pub const EPSILON: f64 = 1e-9;

pub const MARKER_COUNT: usize = 23;

/// Marker labels in file and storage order.
pub const MARKER_LABELS: [&str; MARKER_COUNT] = [
    "f11", "f12", "f13", "f14", "f21", "f22", "f23", "f24", "f31", "f32", "f33", "f34", "f41", "f42",
    "f43", "f44", "t3", "t4", "t5", "t6", "t7", "e1", "e2",
];

pub const JOINT_COUNT: usize = 17;

/// Joint names in configuration order.
pub const JOINT_NAMES: [&str; JOINT_COUNT] = [
    "J1_1", "J1_2", "J2_1", "J2_2", "J2_3", "J3_1", "J3_2", "J3_3", "J4_1", "J4_2", "J4_3", "J5_1",
    "J5_2", "J5_3", "Jw_r", "Jw_p", "Jw_y",
];

pub const THUMB_PRESS: usize = 0;
pub const THUMB_BEND: usize = 1;
pub const WRIST_ROLL: usize = 14;
pub const WRIST_PITCH: usize = 15;
pub const WRIST_YAW: usize = 16;

/// Index of joint `m` (1-based) of finger ray `ray` (1 = index .. 4 = little).
pub const fn finger_joint(ray: usize, m: usize) -> usize {
    2 + 3 * (ray - 1) + (m - 1)
}

pub fn marker_index(label: &str) -> Option<usize> {
    MARKER_LABELS.iter().position(|l| *l == label)
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

/// The vector from `a` to `b`.
pub fn vector_between(a: Vec3, b: Vec3) -> Vec3 {
    sub(b, a)
}

fn checked_angle(u: Vec3, v: Vec3, what: impl FnOnce() -> String) -> Result<f64> {
    if norm(u) <= EPSILON || norm(v) <= EPSILON {
        return Err(Error::Degenerate(what()));
    }
    Ok(norm(cross(u, v)).atan2(dot(u, v)))
}

/// Angle in `[0, π]` between two non-degenerate vectors.
pub fn angle_between(u: Vec3, v: Vec3) -> Result<f64> {
    checked_angle(u, v, || format!("zero-length vector in angle ({u:?}, {v:?})"))
}

/// Unit normal of the palm plane, oriented as `(f41 − f11) × (t4 − f11)`.
pub fn palm_normal(f11: Vec3, f41: Vec3, t4: Vec3) -> Result<Vec3> {
    let c = cross(sub(f41, f11), sub(t4, f11));
    let n = norm(c);
    if n <= EPSILON {
        return Err(Error::Degenerate("palm markers f11, f41, t4 are collinear".into()));
    }
    Ok(scale(c, 1.0 / n))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Configuration(pub [f64; JOINT_COUNT]);

impl Configuration {
    /// Straight fingers and thumb, neutral wrist.
    pub fn rest() -> Self {
        let mut a = [std::f64::consts::PI; JOINT_COUNT];
        a[THUMB_PRESS] = std::f64::consts::FRAC_PI_2;
        a[WRIST_ROLL] = std::f64::consts::FRAC_PI_2;
        a[WRIST_PITCH] = std::f64::consts::FRAC_PI_2;
        a[WRIST_YAW] = std::f64::consts::FRAC_PI_2;
        Configuration(a)
    }

    pub fn angles(&self) -> &[f64; JOINT_COUNT] {
        &self.0
    }
}

/// One motion-capture sample. Missing markers are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkerFrame {
    pub time: f64,
    pub positions: [Option<Vec3>; MARKER_COUNT],
}

impl MarkerFrame {
    pub fn empty(time: f64) -> Self {
        Self {
            time,
            positions: [None; MARKER_COUNT],
        }
    }

    pub fn get(&self, label: &str) -> Result<Vec3> {
        let i = marker_index(label).ok_or_else(|| Error::MissingMarker(label.to_string()))?;
        let p = self.positions[i].ok_or_else(|| Error::MissingMarker(label.to_string()))?;
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("marker {label}")));
        }
        Ok(p)
    }

    pub fn set(&mut self, label: &str, p: Vec3) -> Result<()> {
        let i = marker_index(label).ok_or_else(|| Error::MissingMarker(label.to_string()))?;
        self.positions[i] = Some(p);
        Ok(())
    }

    /// Applies `p ↦ R·p + t` to every present marker.
    pub fn transformed(&self, rotation: [[f64; 3]; 3], translation: Vec3) -> Self {
        let mut out = self.clone();
        for p in out.positions.iter_mut().flatten() {
            let q = *p;
            *p = add(
                [dot(rotation[0], q), dot(rotation[1], q), dot(rotation[2], q)],
                translation,
            );
        }
        out
    }
}

/// Palm-base marker used as the proximal reference of each finger's MP angle
/// (rays 1..4).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorTable(pub [String; 4]);

impl Default for AnchorTable {
    fn default() -> Self {
        AnchorTable(std::array::from_fn(|_| "t5".to_string()))
    }
}

fn labelled_angle(frame: &MarkerFrame, at: &str, a: &str, b: &str) -> Result<f64> {
    let o = frame.get(at)?;
    let u = vector_between(o, frame.get(a)?);
    let v = vector_between(o, frame.get(b)?);
    checked_angle(u, v, || format!("angle at {at} between {at}->{a} and {at}->{b}"))
}

/// Computes the 17-angle configuration of one marker frame.
pub fn extract_configuration(frame: &MarkerFrame, anchors: &AnchorTable) -> Result<Configuration> {
    let mut x = [0.0; JOINT_COUNT];
    for ray in 1..=4 {
        let m = |j: usize| format!("f{ray}{j}");
        x[finger_joint(ray, 1)] = labelled_angle(frame, &m(1), &anchors.0[ray - 1], &m(2))?;
        x[finger_joint(ray, 2)] = labelled_angle(frame, &m(2), &m(1), &m(3))?;
        x[finger_joint(ray, 3)] = labelled_angle(frame, &m(3), &m(2), &m(4))?;
    }
    let (f11, f41, t3, t4) = (frame.get("f11")?, frame.get("f41")?, frame.get("t3")?, frame.get("t4")?);
    let (t5, t6) = (frame.get("t5")?, frame.get("t6")?);
    let (e1, e2) = (frame.get("e1")?, frame.get("e2")?);
    let normal = palm_normal(f11, f41, t4)?;
    x[THUMB_BEND] = labelled_angle(frame, "t6", "t7", "t5")?;
    x[THUMB_PRESS] = checked_angle(vector_between(t5, t6), normal, || "thumb vector t5->t6".into())?;
    let forearm = vector_between(t4, t3);
    x[WRIST_PITCH] = checked_angle(normal, forearm, || "wrist vector t4->t3".into())?;
    x[WRIST_YAW] = checked_angle(vector_between(f41, f11), forearm, || "wrist yaw vectors f41->f11, t4->t3".into())?;
    x[WRIST_ROLL] = checked_angle(normal, vector_between(e1, e2), || "elbow vector e1->e2".into())?;
    Ok(Configuration(x))
}

/// Divides every angle by π.
pub fn normalize_configuration(x: &Configuration) -> Result<[f64; JOINT_COUNT]> {
    let mut out = [0.0; JOINT_COUNT];
    for (i, (&a, o)) in x.0.iter().zip(out.iter_mut()).enumerate() {
        if !(0.0..=std::f64::consts::PI).contains(&a) {
            return Err(Error::invalid(format!(
                "angle {} = {a} outside [0, π]",
                JOINT_NAMES[i]
            )));
        }
        *o = a / std::f64::consts::PI;
    }
    Ok(out)
}

/// Inverse of [`normalize_configuration`].
pub fn denormalize_configuration(v: &[f64; JOINT_COUNT]) -> Result<Configuration> {
    let mut out = [0.0; JOINT_COUNT];
    for (i, (&a, o)) in v.iter().zip(out.iter_mut()).enumerate() {
        if !(0.0..=1.0).contains(&a) {
            return Err(Error::invalid(format!(
                "normalized angle {} = {a} outside [0, 1]",
                JOINT_NAMES[i]
            )));
        }
        *o = a * std::f64::consts::PI;
    }
    Ok(Configuration(out))
}
