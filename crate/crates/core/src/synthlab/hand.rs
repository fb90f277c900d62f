//! Planar-segment forward kinematics producing marker frames whose
//! extracted configuration is exactly the input.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{
    add, cross, dot, finger_joint, norm, scale, sub, AnchorTable, Configuration, MarkerFrame, Vec3, EPSILON,
    JOINT_NAMES, THUMB_BEND, THUMB_PRESS, WRIST_PITCH, WRIST_ROLL, WRIST_YAW,
};

/// Segment lengths and palm layout in millimeters, hand frame: x distal,
/// y toward the little finger, z the palm normal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HandGeometry {
    /// MP joint spacing between neighbouring rays.
    pub ray_spacing: f64,
    /// Proximal, middle and distal segment of rays 1..4.
    pub segments: [[f64; 3]; 4],
    /// Palm-base marker t4, in the palm plane.
    pub t4: [f64; 2],
    /// Thenar marker t5, in the palm plane.
    pub t5: [f64; 2],
    /// In-plane direction of the thumb's metacarpal when it lies flat.
    pub thumb_direction: [f64; 2],
    pub thumb_segments: [f64; 2],
    pub forearm_length: f64,
    pub elbow_offset: f64,
    pub elbow_span: f64,
    pub anchors: AnchorTable,
    /// Rigid placement of the hand frame in the capture volume.
    pub rotation: [[f64; 3]; 3],
    pub translation: Vec3,
}

impl Default for HandGeometry {
    fn default() -> Self {
        Self {
            ray_spacing: 20.0,
            segments: [[45.0, 25.0, 20.0], [48.0, 28.0, 22.0], [45.0, 26.0, 21.0], [36.0, 20.0, 18.0]],
            t4: [-80.0, 30.0],
            t5: [-60.0, -16.0],
            thumb_direction: [0.5, -1.0],
            thumb_segments: [40.0, 30.0],
            forearm_length: 60.0,
            elbow_offset: 150.0,
            elbow_span: 40.0,
            anchors: AnchorTable::default(),
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }
}

fn unit(v: Vec3) -> Vec3 {
    scale(v, 1.0 / norm(v))
}

impl HandGeometry {
    fn mp(&self, ray: usize) -> Vec3 {
        [0.0, (ray - 1) as f64 * self.ray_spacing, 0.0]
    }

    fn palm_point(p: [f64; 2]) -> Vec3 {
        [p[0], p[1], 0.0]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| Err(Error::Geometry { stage: "hand geometry".into(), detail });
        let lengths = self.segments.iter().flatten().chain(&self.thumb_segments).chain([
            &self.ray_spacing,
            &self.forearm_length,
            &self.elbow_offset,
            &self.elbow_span,
        ]);
        if lengths.clone().any(|&l| !(l > 0.0 && l.is_finite())) {
            return bad("all segment lengths must be positive".into());
        }
        for (ray, anchor) in self.anchors.0.iter().enumerate() {
            let p = match anchor.as_str() {
                "t4" => self.t4,
                "t5" => self.t5,
                other => return bad(format!("ray {} anchor `{other}` is not a palm-plane marker", ray + 1)),
            };
            if norm(sub(Self::palm_point(p), self.mp(ray + 1))) <= EPSILON {
                return bad(format!("ray {} anchor coincides with its MP marker", ray + 1));
            }
        }
        // palm normal must come out as +z in the hand frame
        let normal = cross(sub(self.mp(4), self.mp(1)), sub(Self::palm_point(self.t4), self.mp(1)));
        if normal[2] <= EPSILON {
            return bad("t4 must lie on the proximal side of the MP row".into());
        }
        if norm([self.thumb_direction[0], self.thumb_direction[1], 0.0]) <= EPSILON {
            return bad("thumb direction is zero".into());
        }
        let r = self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let d = dot(r[i], r[j]) - if i == j { 1.0 } else { 0.0 };
                if d.abs() > 1e-9 {
                    return bad("rotation is not orthonormal".into());
                }
            }
        }
        let det = dot(r[0], cross(r[1], r[2]));
        if (det - 1.0).abs() > 1e-9 {
            return bad("rotation is not proper".into());
        }
        Ok(())
    }
}

/// Whether the wrist pitch and yaw can be realized by one forearm direction:
/// both are measured against the same vector t4→t3 from two orthogonal axes.
pub fn wrist_realizable(x: &Configuration) -> bool {
    let (p, y) = (x.0[WRIST_PITCH].cos(), x.0[WRIST_YAW].cos());
    p * p + y * y <= 1.0 + 1e-12
}

/// Uniform draw over a comfortable joint range; wrist pitch and yaw are
/// redrawn until [`wrist_realizable`] holds.
pub fn random_configuration<R: rand::Rng + ?Sized>(rng: &mut R) -> Configuration {
    use std::f64::consts::{FRAC_PI_4, PI};
    let mut x = Configuration::rest();
    for ray in 1..=4 {
        for m in 1..=3 {
            x.0[finger_joint(ray, m)] = rng.gen_range(FRAC_PI_4..=PI);
        }
    }
    x.0[THUMB_PRESS] = rng.gen_range(0.2..=PI - 0.2);
    x.0[THUMB_BEND] = rng.gen_range(FRAC_PI_4..=PI);
    x.0[WRIST_ROLL] = rng.gen_range(0.2..=PI - 0.2);
    loop {
        x.0[WRIST_PITCH] = rng.gen_range(FRAC_PI_4..=3.0 * FRAC_PI_4);
        x.0[WRIST_YAW] = rng.gen_range(FRAC_PI_4..=3.0 * FRAC_PI_4);
        if wrist_realizable(&x) {
            return x;
        }
    }
}

/// Places every marker so that [`crate::kinematics::extract_configuration`]
/// with `geometry.anchors` recovers `x`.
pub fn markers_from_config(x: &Configuration, geometry: &HandGeometry, time: f64) -> Result<MarkerFrame> {
    geometry.validate()?;
    for (i, &a) in x.0.iter().enumerate() {
        if !(0.0..=std::f64::consts::PI).contains(&a) {
            return Err(Error::invalid(format!("{} = {a} outside [0, π]", JOINT_NAMES[i])));
        }
    }
    if !wrist_realizable(x) {
        return Err(Error::Geometry {
            stage: "wrist".into(),
            detail: format!(
                "cos²(pitch) + cos²(yaw) = {} exceeds 1",
                x.0[WRIST_PITCH].cos().powi(2) + x.0[WRIST_YAW].cos().powi(2)
            ),
        });
    }
    let n: Vec3 = [0.0, 0.0, 1.0];
    let t4 = HandGeometry::palm_point(geometry.t4);
    let t5 = HandGeometry::palm_point(geometry.t5);
    let mut f = MarkerFrame::empty(time);
    f.set("t4", t4)?;
    f.set("t5", t5)?;

    for ray in 1..=4 {
        let mp = geometry.mp(ray);
        let anchor = match geometry.anchors.0[ray - 1].as_str() {
            "t4" => t4,
            _ => t5,
        };
        // flexion plane: e1 points away from the anchor, e2 toward the palm side
        let e1 = unit(sub(mp, anchor));
        let e2 = scale(n, -1.0);
        let mut phi = 0.0;
        let mut p = mp;
        f.set(&format!("f{ray}1"), p)?;
        for (m, &len) in geometry.segments[ray - 1].iter().enumerate() {
            phi += std::f64::consts::PI - x.0[finger_joint(ray, m + 1)];
            let d = add(scale(e1, phi.cos()), scale(e2, phi.sin()));
            p = add(p, scale(d, len));
            f.set(&format!("f{ray}{}", m + 2), p)?;
        }
    }

    let a = unit([geometry.thumb_direction[0], geometry.thumb_direction[1], 0.0]);
    let (tp, tb) = (x.0[THUMB_PRESS], x.0[THUMB_BEND]);
    let w = add(scale(n, tp.cos()), scale(a, tp.sin()));
    let t6 = add(t5, scale(w, geometry.thumb_segments[0]));
    let b = sub(scale(a, tp.cos()), scale(n, tp.sin()));
    let v = add(scale(w, -tb.cos()), scale(b, tb.sin()));
    f.set("t6", t6)?;
    f.set("t7", add(t6, scale(v, geometry.thumb_segments[1])))?;

    // forearm direction q: angle to n is pitch, angle to f41→f11 (−y) is yaw
    let (cp, cy) = (x.0[WRIST_PITCH].cos(), x.0[WRIST_YAW].cos());
    let q = [-(1.0 - cp * cp - cy * cy).max(0.0).sqrt(), -cy, cp];
    let t3 = add(t4, scale(q, geometry.forearm_length));
    f.set("t3", t3)?;
    let roll = x.0[WRIST_ROLL];
    let e1 = add(t3, scale(q, geometry.elbow_offset));
    let r = add(scale(n, roll.cos()), scale([0.0, -1.0, 0.0], roll.sin()));
    f.set("e1", e1)?;
    f.set("e2", add(e1, scale(r, geometry.elbow_span)))?;

    Ok(f.transformed(geometry.rotation, geometry.translation))
}
