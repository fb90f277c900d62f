//! Recovers joint angles from markers of a posed hand, before and after a
//! rigid motion of the whole marker set.
//!
//! ```bash
//! cargo run --release --example joint_angles
//! ```

use finemotion::kinematics::{extract_configuration, AnchorTable};
use finemotion::synthlab::{markers_from_config, random_configuration, random_rigid, HandGeometry};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> finemotion::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pose = random_configuration(&mut rng);
    let frame = markers_from_config(&pose, &HandGeometry::default(), 0.0)?;
    let anchors = AnchorTable::default();
    let recovered = extract_configuration(&frame, &anchors)?;
    let (rotation, translation) = random_rigid(&mut rng);
    let moved = extract_configuration(&frame.transformed(rotation, translation), &anchors)?;
    println!("joint   posed    recovered  after motion");
    for (j, ((a, b), c)) in pose.0.iter().zip(&recovered.0).zip(&moved.0).enumerate() {
        println!("{j:>5} {a:>8.4} {b:>12.4} {c:>12.4}");
    }
    Ok(())
}
