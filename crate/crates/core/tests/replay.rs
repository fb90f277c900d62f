mod common;

use finemotion::datapipe::Task;
use finemotion::train::replay::{extract_events, parse_midi, rasterize, replay, write_midi, ReplayConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn thousand_streams_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    common::replay_round_trips(&mut rng, 1000).unwrap();
}

#[test]
fn typing_output_spells_fingers_in_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let events = common::random_stream(&mut rng, 100);
    let cfg = ReplayConfig::default();
    let out = replay(&rasterize(&events, 100, common::RATE), common::RATE, Task::Typing, &cfg).unwrap();
    let expected: String = events.iter().map(|e| cfg.keys[usize::from(e.finger) - 1].as_str()).collect();
    assert_eq!(out.text.unwrap(), expected);
}

#[test]
fn corrupt_midi_is_rejected() {
    let bytes = write_midi(&[]);
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(parse_midi(&bad).is_err());
    assert!(parse_midi(&bytes[..bytes.len() - 2]).is_err());
    assert!(parse_midi(&bytes).unwrap().is_empty());
}

proptest! {
    #[test]
    fn events_lie_inside_the_sequence(probs in prop::collection::vec(prop::array::uniform5(0.0f64..1.0), 0..120)) {
        let events = extract_events(&probs, 20.0, &ReplayConfig::default()).unwrap();
        let end = probs.len() as f64 / 20.0;
        for e in &events {
            prop_assert!(e.onset < e.release);
            prop_assert!(e.release <= end + 1e-12);
            prop_assert!((1..=5).contains(&e.finger));
        }
    }

    #[test]
    fn threshold_one_above_all_gives_nothing(probs in prop::collection::vec(prop::array::uniform5(0.0f64..0.999), 0..60)) {
        let cfg = ReplayConfig { threshold: 0.9995, ..ReplayConfig::default() };
        prop_assert!(extract_events(&probs, 20.0, &cfg).unwrap().is_empty());
    }
}
