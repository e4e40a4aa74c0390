use lasermix::checkpoint::{decode, encode};
use lasermix_core::nn::{ModelConfig, SegModel, INPUT_CHANNELS};
use lasermix_core::rng;
use lasermix_core::ssl::{Hyperparams, TrainState};

fn state() -> TrainState {
    let mut g = rng::seeded(4);
    let mut s = TrainState::new(
        SegModel::new(INPUT_CHANNELS, &ModelConfig::default(), 5, &mut g),
        Hyperparams::default(),
    );
    s.teacher = SegModel::new(INPUT_CHANNELS, &ModelConfig::default(), 5, &mut g);
    s.step = 1234;
    s
}

#[test]
fn round_trip_is_exact() {
    let s = state();
    let bytes = encode(&s);
    let back = decode(&bytes, &s.student, s.hyper).unwrap();
    assert_eq!(back, s);
    assert_eq!(encode(&back), bytes);
}

#[test]
fn every_truncation_is_rejected() {
    let s = state();
    let bytes = encode(&s);
    for n in (0..bytes.len()).step_by(7).chain([bytes.len() - 1]) {
        assert!(
            decode(&bytes[..n], &s.student, s.hyper).is_err(),
            "prefix {n}"
        );
    }
    let mut long = bytes.clone();
    long.push(0);
    assert!(decode(&long, &s.student, s.hyper).is_err());
}

#[test]
fn other_architecture_is_rejected() {
    let s = state();
    let bytes = encode(&s);
    let other = SegModel::zeros(
        INPUT_CHANNELS,
        &ModelConfig {
            channels: vec![16, 8],
        },
        5,
    );
    let err = decode(&bytes, &other, s.hyper).unwrap_err();
    assert!(err.to_string().contains("do not match"), "{err}");
}
