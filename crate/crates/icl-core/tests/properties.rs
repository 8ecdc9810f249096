//! Randomized invariant checks: softmax normalization, permutation
//! invariance, the dual-model equivalences (learning-rate, schedule,
//! attention ↔ dual prediction), neutral-parameter reductions of the
//! modified attention variants, and sign/monotonicity facts about the
//! generalization diagnostics.

use proptest::prelude::*;

use icl_core::attention::{
    exact_attention_query, kernel_attention_query, negative_attention, negative_sample_selection,
    regularized_attention, regularized_self_weights, AttentionWeights, ContextLayout, KernelEval,
};
use icl_core::dual::{build_dual_for_attention, dual_update, verify_equivalence, UpdateMode};
use icl_core::generalization::{bound_surrogate, gap_from_samples, BoundInputs};
use icl_core::kernel::{apply_feature_map, FeatureMapSpec};
use icl_core::numerics::matrix::{column_softmax, relative_l2_error};
use icl_core::{CoreError, DenseMatrix};

/// A rows×cols matrix with entries in [-limit, limit].
fn matrix(rows: usize, cols: usize, limit: f64) -> impl Strategy<Value = DenseMatrix> {
    prop::collection::vec(-limit..limit, rows * cols)
        .prop_map(move |v| DenseMatrix::from_vec(rows, cols, v).unwrap())
}

fn weights(d: usize, limit: f64) -> impl Strategy<Value = AttentionWeights> {
    (matrix(d, d, limit), matrix(d, d, limit), matrix(d, d, limit))
        .prop_map(|(q, k, v)| AttentionWeights::new(q, k, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_columns_are_probability_distributions(
        scores in matrix(4, 6, 40.0),
    ) {
        let a = column_softmax(&scores).unwrap();
        for j in 0..a.cols() {
            let col = a.col(j);
            prop_assert!(col.iter().all(|&v| v > 0.0 && v <= 1.0));
            let s: f64 = col.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12, "column {} sums to {}", j, s);
        }
    }

    #[test]
    fn positive_feature_maps_stay_strictly_positive(
        x in prop::collection::vec(-2.0..2.0f64, 3),
        seed in 0u64..1_000,
    ) {
        let mut rng = icl_core::SeededRng::new(seed, 0);
        let prf = FeatureMapSpec::positive_random_features(16, 3, &mut rng);
        let elu = FeatureMapSpec::elu_plus_one(3);
        for spec in [&prf, &elu] {
            let phi = apply_feature_map(spec, &x).unwrap();
            prop_assert!(phi.iter().all(|&v| v.is_finite() && v > 0.0));
        }
    }

    #[test]
    fn kernel_attention_is_invariant_to_context_order(
        x in matrix(3, 5, 1.5),
        q in prop::collection::vec(-1.5..1.5f64, 3),
        w in weights(3, 1.0),
        rot in 0usize..5,
    ) {
        let spec = FeatureMapSpec::elu_plus_one(3);
        let base = kernel_attention_query(&x, &q, &w, &KernelEval::Features(&spec)).unwrap();
        let cols: Vec<&[f64]> = (0..5).map(|j| x.col((j + rot) % 5)).collect();
        let rotated = DenseMatrix::from_columns(&cols).unwrap();
        let out = kernel_attention_query(&rotated, &q, &w, &KernelEval::Features(&spec)).unwrap();
        prop_assert!(relative_l2_error(&base, &out) < 1e-12);
    }

    #[test]
    fn attention_equals_trained_dual_prediction(
        x_d in matrix(3, 5, 1.2),
        q in prop::collection::vec(-1.2..1.2f64, 3),
        w in weights(3, 0.8),
    ) {
        let spec = FeatureMapSpec::elu_plus_one(3);
        let layout = ContextLayout::demos_with_self(5);
        for steps in [1usize, 5] {
            let rep = verify_equivalence(&x_d, None, &q, &w, &spec, &layout, steps).unwrap();
            prop_assert!(
                rep.final_relative_error() < 1e-10,
                "steps {}: {}",
                steps,
                rep.final_relative_error()
            );
            prop_assert!(rep.distances[0] >= rep.final_distance);
        }
    }

    #[test]
    fn dual_training_is_learning_rate_and_schedule_invariant(
        x_d in matrix(3, 4, 1.2),
        q in prop::collection::vec(-1.2..1.2f64, 3),
        w in weights(3, 0.8),
        eta_log in -3.0..3.0f64,
    ) {
        let spec = FeatureMapSpec::elu_plus_one(3);
        let layout = ContextLayout::demos_with_self(4);
        let eta = 10f64.powf(eta_log);
        let mut finals = Vec::new();
        for mode in [UpdateMode::FullBatch, UpdateMode::Incremental, UpdateMode::IncrementalReversed] {
            for e in [1.0, eta] {
                let (mut model, ds) =
                    build_dual_for_attention(&x_d, None, &q, &w, &spec, &layout, e).unwrap();
                let trace = dual_update(&mut model, &ds, mode).unwrap();
                finals.push(trace.predictions.last().unwrap().clone());
            }
        }
        for f in &finals[1..] {
            prop_assert!(
                relative_l2_error(&finals[0], f) < 1e-13,
                "schedule/learning-rate variance: {}",
                relative_l2_error(&finals[0], f)
            );
        }
    }

    #[test]
    fn neutral_parameters_reduce_to_unmodified_attention(
        x_d in matrix(3, 4, 1.2),
        q in prop::collection::vec(-1.2..1.2f64, 3),
        w in weights(3, 0.8),
    ) {
        let ctx = {
            let cols: Vec<&[f64]> = (0..4).map(|j| x_d.col(j)).chain(std::iter::once(&q[..])).collect();
            DenseMatrix::from_columns(&cols).unwrap()
        };
        let base = exact_attention_query(&ctx, &q, &w, true).unwrap();
        let reg = regularized_attention(&x_d, None, &q, &w, 0.0, true).unwrap();
        prop_assert_eq!(&base, &reg);
        let neg = negative_attention(&x_d, None, &q, &w, 0.0, 0, true).unwrap();
        prop_assert_eq!(&base, &neg);
    }

    #[test]
    fn negative_selection_picks_k_other_demos(
        x_d in matrix(3, 6, 1.5),
        w in weights(3, 1.0),
        k in 1usize..5,
    ) {
        let sel = negative_sample_selection(&x_d, &w, k).unwrap();
        prop_assert_eq!(sel.len(), 6);
        for (i, neighbors) in sel.iter().enumerate() {
            prop_assert_eq!(neighbors.len(), k);
            let mut sorted = neighbors.clone();
            sorted.sort_unstable();
            sorted.dedup();
            prop_assert_eq!(sorted.len(), k, "duplicates in selection {:?}", neighbors);
            prop_assert!(neighbors.iter().all(|&j| j != i && j < 6));
        }
    }

    #[test]
    fn regularized_self_weight_columns_sum_to_one(
        x in matrix(3, 4, 1.5),
        w in weights(3, 0.8),
        alpha in 0.0..0.9f64,
    ) {
        let a = regularized_self_weights(&x, &w, alpha).unwrap();
        for j in 0..4 {
            let s: f64 = a.col(j).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn empirical_gap_is_nonnegative(
        train in matrix(4, 5, 1.5),
        eval in matrix(4, 9, 1.5),
        w in weights(4, 1.0),
        budget in 0.1..5.0f64,
    ) {
        let spec = FeatureMapSpec::elu_plus_one(4);
        match gap_from_samples(&train, &eval, &w, &spec, budget) {
            Ok(gap) => prop_assert!(gap >= -1e-12, "gap {}", gap),
            Err(CoreError::DegenerateMinimizer) => {}
            Err(e) => return Err(TestCaseError::fail(format!("unexpected error {e:?}"))),
        }
        match gap_from_samples(&train, &train, &w, &spec, budget) {
            Ok(self_gap) => prop_assert!(self_gap.abs() <= 1e-12, "self gap {}", self_gap),
            Err(CoreError::DegenerateMinimizer) => {}
            Err(e) => return Err(TestCaseError::fail(format!("unexpected error {e:?}"))),
        }
    }

    #[test]
    fn bound_surrogate_decreases_when_trace_grows_linearly(
        w in 0.1..3.0f64,
        rho in 0.1..3.0f64,
        d_o in 1usize..8,
        per_token in 0.1..4.0f64,
        delta in 0.01..0.5f64,
        n in 4usize..64,
    ) {
        let at = |n: usize| {
            let b = BoundInputs { w, rho, d_o, n, delta, r: None };
            bound_surrogate(&b, per_token * n as f64).unwrap()
        };
        prop_assert!(at(4 * n) < at(n));
    }
}
