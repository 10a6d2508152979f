//! Cross-module checks: the synthetic generator, frame subsampling, patch
//! extraction, and rollout reachability working together.

mod common;

use graspformer_core::data::{generate_grasp, planted_params, SyntheticSpec};
use graspformer_core::params::{Bindings, ParamStore};
use graspformer_core::rollout::{rollout, temporal_profile, AttentionRecorder, AxisSelection, RolloutMap};
use graspformer_core::tensor::Tape;
use graspformer_core::transformer::{encode, init_encoder_params, patchify, EncoderConfig, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn paper_scale_generation_subsampling_and_patching_line_up() {
    // Full-scale tactile geometry: 24 raw frames of 200x150 come out of the
    // generator subsampled to 8, and 20x15 patches then give exactly 800
    // tokens (801 with CLS).
    let spec = SyntheticSpec {
        samples: 1,
        tactile_height: 200,
        tactile_width: 150,
        visual_height: 16,
        visual_width: 12,
        seed: 3,
        ..SyntheticSpec::default()
    };
    let samples = generate_grasp(&spec).unwrap();
    let seq = &samples[0].pinch_tactile;
    assert_eq!(seq.frames(), 8, "generator subsamples 24 raw frames to 8");

    let cfg = EncoderConfig::new(Variant::DividedSpaceTime, 256, 16, 8, (20, 15), 8, (200, 150), 1);
    let patches = patchify(seq, &cfg).unwrap();
    assert_eq!(patches.shape(), &[800, 300]);
    assert_eq!(cfg.token_count(), 801);
}

#[test]
fn temporal_profile_matches_hand_computation_on_two_frames() {
    // 2 frames x 2 patches, explicit rollout matrix. Selected patch 0 at the
    // final frame; per-frame masses are read straight off its row.
    let matrix = vec![
        1.0, 0.0, 0.0, 0.0, //
        0.0, 1.0, 0.0, 0.0, //
        0.3, 0.1, 0.5, 0.1, // row of token (frame 1, patch 0)
        0.0, 0.0, 0.0, 1.0,
    ];
    let map = RolloutMap { matrix, token_count: 4, frames: 2, spatial: 2, has_cls: false };
    let profile = temporal_profile(&map, &[0]).unwrap();
    // Frame 0 mass 0.3 + 0.1 = 0.4; frame 1 mass 0.5 + 0.1 = 0.6.
    assert!((profile[0] - 0.4).abs() < 1e-6);
    assert!((profile[1] - 0.6).abs() < 1e-6);
}

#[test]
fn rollout_reaches_temporal_neighbours_with_positive_mass() {
    // In a divided-space-time encoder every final-frame patch can reach its
    // own spatial position at every earlier frame through temporal groups,
    // and softmax keeps those weights strictly positive, so rollout mass
    // along that path must be strictly positive.
    let cfg = EncoderConfig::new(Variant::DividedSpaceTime, 16, 2, 2, (2, 2), 3, (4, 4), 1);
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let mut store = ParamStore::new();
    init_encoder_params(&cfg, "enc", &mut store, &mut rng).unwrap();
    let numel = cfg.frames * cfg.height * cfg.width;
    let seq = graspformer_core::data::ImageSequence::new(
        (0..numel).map(|_| rng.random::<f32>()).collect(),
        (cfg.frames, cfg.height, cfg.width, 1),
        graspformer_core::data::Modality::Tactile,
        None,
    )
    .unwrap();
    let mut tape = Tape::new();
    let mut bind = Bindings::new();
    let mut rec = AttentionRecorder::new();
    encode(&mut tape, &mut bind, &store, "enc", &seq, &cfg, Some(&mut rec)).unwrap();
    let map = rollout(&rec, AxisSelection::All).unwrap();
    let last = map.frames - 1;
    for s in 0..map.spatial {
        let row = map.row_of(last, s);
        for f in 0..map.frames {
            let mass = map.value(row, map.row_of(f, s));
            assert!(mass > 0.0, "no mass from (f{last}, s{s}) back to (f{f}, s{s})");
        }
    }
}

#[test]
fn planted_interval_geometry_holds_for_many_samples() {
    let spec = SyntheticSpec { samples: 200, ..SyntheticSpec::default() };
    for i in 0..spec.samples {
        let p = planted_params(&spec, i);
        assert!(p.safe_lo >= 4 && p.safe_hi <= 16 && p.safe_lo <= p.safe_hi);
        assert!((4..=16).contains(&p.threshold));
    }
}
