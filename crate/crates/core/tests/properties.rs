//! Property tests for the numeric invariants: softmax stochasticity, no
//! NaN/Inf on bounded inputs, bit-exact round-trips, and the grasp-trigger
//! rule against a naive oracle.

use graspformer_core::force::{select_safe_threshold, trigger_grasp, CandidateSet};
use graspformer_core::heads::GraspOutcome;
use graspformer_core::tensor::{read_tensor, write_tensor, Tape, Tensor};
use proptest::prelude::*;

fn bounded_f32() -> impl Strategy<Value = f32> {
    prop_oneof![
        (-1000.0f32..1000.0),
        Just(0.0f32),
        Just(-0.0f32),
        Just(1000.0f32),
        Just(-1000.0f32),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn softmax_rows_are_distributions(
        rows in 1usize..5,
        cols in 1usize..9,
        values in proptest::collection::vec(bounded_f32(), 1..40),
    ) {
        let numel = rows * cols;
        let data: Vec<f32> = (0..numel).map(|i| values[i % values.len()]).collect();
        let mut tape = Tape::new();
        let x = tape.leaf_data(data, &[rows, cols], false).unwrap();
        let y = tape.softmax_lastdim(x).unwrap();
        let out = tape.data(y);
        prop_assert!(out.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        for r in 0..rows {
            let sum: f32 = out[r * cols..(r + 1) * cols].iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-6, "row {r} sums to {sum}");
        }
    }

    #[test]
    fn bounded_inputs_never_produce_nonfinite_values(
        values in proptest::collection::vec(bounded_f32(), 12),
    ) {
        let mut tape = Tape::new();
        let x = tape.leaf_data(values.clone(), &[3, 4], false).unwrap();
        let g = tape.gelu(x).unwrap();
        prop_assert!(tape.data(g).iter().all(|v| v.is_finite()));
        let gamma = tape.constant(vec![1.0; 4], &[4]).unwrap();
        let beta = tape.constant(vec![0.0; 4], &[4]).unwrap();
        let ln = tape.layer_norm(x, gamma, beta, 1e-5).unwrap();
        prop_assert!(tape.data(ln).iter().all(|v| v.is_finite()));
        let xt = tape.transpose(x, &[1, 0]).unwrap();
        let mm = tape.matmul(x, xt).unwrap();
        prop_assert!(tape.data(mm).iter().all(|v| v.is_finite()));
        let sm = tape.softmax_lastdim(mm).unwrap();
        prop_assert!(tape.data(sm).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn tensor_serialization_roundtrips_bitwise(
        values in proptest::collection::vec(bounded_f32(), 1..32),
    ) {
        let t = Tensor::new(values.clone(), &[values.len()]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let back = read_tensor(&mut buf.as_slice()).unwrap();
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(t.data()), bits(back.data()));
        prop_assert_eq!(t.shape(), back.shape());
    }

    #[test]
    fn reshape_roundtrip_preserves_bits(
        values in proptest::collection::vec(bounded_f32(), 12),
    ) {
        let mut tape = Tape::new();
        let x = tape.leaf_data(values.clone(), &[3, 4], false).unwrap();
        let r1 = tape.reshape(x, &[2, 6]).unwrap();
        let r2 = tape.reshape(r1, &[3, 4]).unwrap();
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(tape.data(x)), bits(tape.data(r2)));
    }

    #[test]
    fn trigger_rule_matches_naive_scan(
        depths in proptest::collection::vec(0.0f64..20.0, 0..40),
        threshold in 0.0f64..20.0,
    ) {
        // Naive oracle: first i whose trailing window of three readings all
        // exceed the threshold.
        let naive = (0..depths.len()).find(|&i| {
            i >= 2 && (i - 2..=i).all(|j| depths[j] > threshold)
        });
        prop_assert_eq!(trigger_grasp(&depths, threshold), naive);
    }

    #[test]
    fn chosen_threshold_stays_inside_candidate_bounds(
        lo in 4i64..=16,
        width in 0i64..=12,
        flip in proptest::collection::vec(any::<bool>(), 13),
    ) {
        let hi = (lo + width).min(16);
        // Predictor: safe on [lo, hi], with some candidates randomly demoted
        // to unsafe; still never selects outside [4, 16].
        let result = select_safe_threshold(
            |t| {
                let t_i = t as i64;
                let idx = (t_i - 4) as usize;
                Ok(if (lo..=hi).contains(&t_i) && !flip[idx] {
                    [5.0, 0.0, 0.0]
                } else {
                    [0.0, 5.0, 0.0]
                })
            },
            &CandidateSet::default(),
        );
        if let Ok(r) = result {
            let chosen = r.chosen_threshold.unwrap();
            prop_assert!((4.0..=16.0).contains(&chosen));
            let mean = r.safe_set.iter().sum::<f64>() / r.safe_set.len() as f64;
            prop_assert_eq!(chosen, mean);
            prop_assert!(r.calls.iter().all(|c| c.outcome != GraspOutcome::SafeGrasping
                || r.safe_set.contains(&c.threshold)));
        }
    }
}
