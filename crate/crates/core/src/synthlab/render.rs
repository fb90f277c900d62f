//! Ultrasound-like frames: five horizontal bands whose thickness and
//! vertical position follow groups of joint angles.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{finger_joint, Configuration, THUMB_BEND, THUMB_PRESS, WRIST_PITCH, WRIST_ROLL, WRIST_YAW};

pub const BANDS: usize = 5;

/// Per-subject appearance. Lengths are fractions of the image side, gains
/// are fractions of the side per radian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectPhenotype {
    pub seed: u64,
    pub centers: [f64; BANDS],
    pub thickness: [f64; BANDS],
    pub thickness_gain: [f64; BANDS],
    pub shift_gain: [f64; BANDS],
    pub brightness: [f64; BANDS],
    /// Vertical drift of each band across the image width.
    pub tilt: [f64; BANDS],
    pub background: f64,
    pub texture_phase: f64,
    /// Speckle scale σ.
    pub sigma: f64,
}

impl SubjectPhenotype {
    pub fn from_seed(seed: u64, sigma: f64) -> Self {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_ba5e);
        let mut j = |lo: f64, hi: f64| rng.gen_range(lo..hi);
        let centers = std::array::from_fn(|b| 0.14 + 0.18 * b as f64 + j(-0.01, 0.01));
        let thickness = std::array::from_fn(|_| j(0.06, 0.075));
        let thickness_gain = std::array::from_fn(|_| j(0.07, 0.09));
        let shift_gain = std::array::from_fn(|_| j(0.04, 0.06));
        let brightness = std::array::from_fn(|_| j(0.55, 0.75));
        let tilt = std::array::from_fn(|_| j(-0.03, 0.03));
        let background = j(0.12, 0.2);
        let texture_phase = j(0.0, std::f64::consts::TAU);
        Self {
            seed,
            centers,
            thickness,
            thickness_gain,
            shift_gain,
            brightness,
            tilt,
            background,
            texture_phase,
            sigma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for b in 0..BANDS {
            if self.thickness[b] <= 0.0 || self.thickness_gain[b] <= 0.0 || self.shift_gain[b] <= 0.0 {
                return Err(Error::invalid(format!("band {b}: thickness and gains must be positive")));
            }
            if b + 1 < BANDS {
                let gap = (self.centers[b + 1] - self.thickness[b + 1] / 2.0) - (self.centers[b] + self.thickness[b] / 2.0);
                if gap <= 0.0 {
                    return Err(Error::invalid(format!("bands {b} and {} overlap at rest", b + 1)));
                }
            }
        }
        if self.sigma < 0.0 {
            return Err(Error::invalid("sigma must be nonnegative"));
        }
        Ok(())
    }
}

/// Joint-group drives, zero at rest: thumb, rays 1..4 (MP + PIP flexion),
/// wrist roll, pitch, yaw deviations.
pub fn joint_drives(x: &Configuration) -> [f64; 8] {
    use std::f64::consts::{FRAC_PI_2, PI};
    let a = &x.0;
    let ray = |r: usize| (PI - a[finger_joint(r, 1)]) + (PI - a[finger_joint(r, 2)]);
    [
        (FRAC_PI_2 - a[THUMB_PRESS]) + 0.5 * (PI - a[THUMB_BEND]),
        ray(1),
        ray(2),
        ray(3),
        ray(4),
        a[WRIST_ROLL] - FRAC_PI_2,
        a[WRIST_PITCH] - FRAC_PI_2,
        a[WRIST_YAW] - FRAC_PI_2,
    ]
}

/// `(center, thickness)` of every band as fractions of the side.
///
/// Each band mixes two drives through an invertible 2×2 map so that
/// neighbouring fingers stay distinguishable.
pub fn band_parameters(x: &Configuration, ph: &SubjectPhenotype, session_shift: f64) -> [(f64, f64); BANDS] {
    let d = joint_drives(x);
    let pairs = [
        (d[0], 0.5 * d[0] + d[5]),
        (d[1] + 0.3 * d[2], d[2] - 0.3 * d[1]),
        (d[2] + 0.3 * d[3], d[3] - 0.3 * d[2]),
        (d[3] + 0.5 * d[4], d[4] - 0.4 * d[3]),
        (d[6], d[7]),
    ];
    std::array::from_fn(|b| {
        let (thick, shift) = pairs[b];
        (
            ph.centers[b] + session_shift + ph.shift_gain[b] * shift,
            (ph.thickness[b] + ph.thickness_gain[b] * thick).max(0.005),
        )
    })
}

fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Renders one `side × side` frame with values in `[0, 1]`.
pub fn render_frame<R: Rng + ?Sized>(
    x: &Configuration,
    ph: &SubjectPhenotype,
    session_shift: f64,
    side: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if side < 32 {
        return Err(Error::invalid(format!("image side {side} below 32")));
    }
    let bands = band_parameters(x, ph, session_shift);
    let n = side as f64;
    let edge = 0.6;
    let mut img = vec![0.0; side * side];
    for col in 0..side {
        let u = (col as f64 + 0.5) / n - 0.5;
        // background texture fixed per subject
        for row in 0..side {
            let v = (row as f64 + 0.5) / n;
            let mut value = ph.background * (1.0 + 0.3 * (7.0 * v + 3.0 * u + ph.texture_phase).sin());
            for (b, &(center, thick)) in bands.iter().enumerate() {
                let c = (center + ph.tilt[b] * u) * n;
                let half = thick * n / 2.0;
                let y = row as f64 + 0.5;
                value += ph.brightness[b] * (logistic((y - (c - half)) / edge) - logistic((y - (c + half)) / edge));
            }
            img[row * side + col] = value;
        }
    }
    if ph.sigma > 0.0 {
        for p in img.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            let e: f64 = rng.sample(StandardNormal);
            *p = *p * (ph.sigma * z).exp() + 0.5 * ph.sigma * e;
        }
    }
    for p in img.iter_mut() {
        *p = p.clamp(0.0, 1.0);
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn noise_free_is_deterministic() {
        let ph = SubjectPhenotype::from_seed(3, 0.0);
        let x = Configuration::rest();
        let a = render_frame(&x, &ph, 0.0, 32, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = render_frame(&x, &ph, 0.0, 32, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bands_respond_to_each_finger() {
        let ph = SubjectPhenotype::from_seed(3, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rest = render_frame(&Configuration::rest(), &ph, 0.0, 64, &mut rng).unwrap();
        for ray in 1..=4 {
            let mut x = Configuration::rest();
            x.0[finger_joint(ray, 1)] -= 0.3;
            let img = render_frame(&x, &ph, 0.0, 64, &mut rng).unwrap();
            assert_ne!(img, rest, "ray {ray}");
        }
    }

    #[test]
    fn pixels_clamped() {
        let ph = SubjectPhenotype::from_seed(9, 0.8);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let img = render_frame(&Configuration::rest(), &ph, 0.0, 48, &mut rng).unwrap();
        assert!(img.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(render_frame(&Configuration::rest(), &ph, 0.0, 16, &mut rng).is_err());
    }

    #[test]
    fn phenotypes_are_valid() {
        for s in 0..50 {
            SubjectPhenotype::from_seed(s, 0.3).validate().unwrap();
        }
    }
}
