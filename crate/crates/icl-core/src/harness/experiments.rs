//! Deterministic experiment drivers built on the task samplers.

use rayon::prelude::*;

use crate::attention::{ffn_forward, wf_rank_report, AttentionWeights, ContextLayout, FfnWeights};
use crate::dual::{verify_equivalence, EquivalenceReport};
use crate::error::{CoreError, Result};
use crate::kernel::{attention_approx_report, FeatureMapKind};
use crate::numerics::rng::{stream_id, SeededRng};

use super::{sample_task_batch, streams, TaskSpec};

/// One row of the rank-bound experiment.
#[derive(Debug, Clone)]
pub struct RankBoundRow {
    pub d_h: usize,
    /// Mean of `min(d, d_h, rank(I_M))` over all draws.
    pub mean_bound: f64,
    pub samples: usize,
}

/// Samples random feed-forward weights and inputs and averages the rank
/// upper bound `min(d, d_h, rank(I_M))` of the induced masked linear map,
/// for each hidden width in `d_h_list`.
///
/// With standard-normal weights, biases, and inputs, each hidden unit is
/// active independently with probability 1/2, so `rank(I_M)` follows a
/// Binomial(d_h, 1/2) law — the oracle the acceptance tests check against.
pub fn rank_bound_experiment(
    d: usize,
    d_h_list: &[usize],
    batches: usize,
    reps: usize,
    rng: &mut SeededRng,
) -> Result<Vec<RankBoundRow>> {
    if d == 0 {
        return Err(CoreError::InvalidParameter {
            name: "d",
            reason: "model dimension must be positive".into(),
        });
    }
    if batches == 0 || reps == 0 {
        return Err(CoreError::InvalidParameter {
            name: "batches/reps",
            reason: "need at least one draw".into(),
        });
    }
    let mut rows = Vec::with_capacity(d_h_list.len());
    for &d_h in d_h_list {
        let samples = batches * reps;
        let mut acc = 0.0_f64;
        for _ in 0..samples {
            let f = FfnWeights::standard_normal(d, d_h, rng);
            let h = rng.normal_vec(d);
            let out = ffn_forward(&h, &f)?;
            acc += wf_rank_report(&f, &out.mask)?.upper_bound as f64;
        }
        rows.push(RankBoundRow {
            d_h,
            mean_bound: acc / samples as f64,
            samples,
        });
    }
    Ok(rows)
}

/// Runs the attention-vs-dual equivalence check on freshly sampled task
/// instances, one per seed (in parallel; output order follows the seed
/// list). `weights` supplies fixed attention weights — e.g. trained ones —
/// otherwise fresh random ones are drawn per seed; either way the identity
/// must hold.
pub fn equivalence_experiment(
    task: &TaskSpec,
    n: usize,
    map: FeatureMapKind,
    seeds: &[u64],
    weights: Option<&AttentionWeights>,
) -> Result<Vec<EquivalenceReport>> {
    if n < 2 {
        return Err(CoreError::InvalidParameter {
            name: "n",
            reason: format!("need at least 2 tokens, got {n}"),
        });
    }
    seeds
        .par_iter()
        .map(|&seed| {
            let mut rng = SeededRng::new(seed, stream_id(streams::EXPERIMENT, 0));
            let batch = sample_task_batch(task, n, &mut rng)?;
            let d_i = task.token_dim();
            let w = match weights {
                Some(w) => w.clone(),
                None => AttentionWeights::random(d_i, d_i, &mut rng),
            };
            let spec = map.materialize(d_i, &mut rng)?;
            let layout = ContextLayout::demos_with_self(n - 1);
            verify_equivalence(
                &batch.demos()?,
                None,
                batch.query(),
                &w,
                &spec,
                &layout,
                n - 1,
            )
        })
        .collect()
}

/// One row of the feature-dimension approximation sweep.
#[derive(Debug, Clone)]
pub struct ApproxRow {
    pub d_r: usize,
    pub trial: usize,
    pub mse: f64,
    pub mae: f64,
}

/// Sweeps the random-feature dimension: for each trial, one token batch
/// and one set of projection weights are drawn and the self-attention
/// matrix approximation error is measured at every `d_r` in the grid
/// (fresh Ω per (trial, d_r), same tokens and weights across the grid so
/// the comparison isolates the feature dimension).
pub fn approximation_sweep(
    task: &TaskSpec,
    d_r_grid: &[usize],
    trials: usize,
    n_tokens: usize,
    base_seed: u64,
) -> Result<Vec<ApproxRow>> {
    if trials == 0 || d_r_grid.is_empty() {
        return Err(CoreError::InvalidParameter {
            name: "trials/d_r_grid",
            reason: "need at least one trial and one grid point".into(),
        });
    }
    let per_trial: Vec<Vec<ApproxRow>> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = SeededRng::new(base_seed, stream_id(streams::EXPERIMENT, trial as u32));
            let batch = sample_task_batch(task, n_tokens, &mut rng)?;
            let d_i = task.token_dim();
            let w = AttentionWeights::random(d_i, d_i, &mut rng);
            let mut rows = Vec::with_capacity(d_r_grid.len());
            for (k, &d_r) in d_r_grid.iter().enumerate() {
                let mut omega_rng = rng.derive(stream_id(streams::OMEGA, k as u32));
                let spec = FeatureMapKind::PositiveRandomFeatures { d_r }
                    .materialize(d_i, &mut omega_rng)?;
                let report = attention_approx_report(&batch.x, &w.w_k, &w.w_q, &spec)?;
                rows.push(ApproxRow {
                    d_r,
                    trial,
                    mse: report.mse,
                    mae: report.mae,
                });
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    Ok(per_trial.into_iter().flatten().collect())
}

/// Median of a non-empty sample (average of the middle pair for even
/// lengths).
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty sample");
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::TaskKind;

    #[test]
    fn rank_bound_saturates_when_all_units_active() {
        // b_1 ≫ 0 forces the identity mask; the report helper is exercised
        // through the same path the experiment uses.
        let mut rng = SeededRng::new(1, 0);
        let d = 5;
        let mut f = FfnWeights::standard_normal(d, d, &mut rng);
        f.b1 = vec![1e6; d];
        let h = rng.normal_vec(d);
        let out = ffn_forward(&h, &f).unwrap();
        assert_eq!(wf_rank_report(&f, &out.mask).unwrap().upper_bound, d);
    }

    #[test]
    fn rank_bound_experiment_tracks_binomial_oracle() {
        let mut rng = SeededRng::new(7, 0);
        let rows = rank_bound_experiment(6, &[6, 18], 64, 2, &mut rng).unwrap();
        // d_h = 6: E[min(6, Bin(6, ½))] = 3 − 6·2⁻⁶ + ... ≈ 2.95; far below 6.
        assert!(rows[0].mean_bound < 4.0);
        assert!(rows[0].mean_bound > 2.0);
        // d_h = 18: Bin(18, ½) rarely dips below 6 → mean close to 6.
        assert!(rows[1].mean_bound > 5.8);
        assert!(rows[1].mean_bound <= 6.0);
    }

    #[test]
    fn rank_bound_experiment_is_deterministic() {
        let run = |seed| {
            let mut rng = SeededRng::new(seed, 0);
            rank_bound_experiment(4, &[4, 8], 16, 2, &mut rng)
                .unwrap()
                .iter()
                .map(|r| r.mean_bound)
                .collect::<Vec<_>>()
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }

    #[test]
    fn equivalence_experiment_closes_on_linear_task() {
        let mut rng = SeededRng::new(11, 0);
        let task = TaskSpec::sample(TaskKind::Linear, 5, 1, &mut rng).unwrap();
        let reports = equivalence_experiment(
            &task,
            8,
            FeatureMapKind::PositiveRandomFeatures { d_r: 64 },
            &[1, 2, 3],
            None,
        )
        .unwrap();
        assert_eq!(reports.len(), 3);
        for r in &reports {
            assert!(r.final_relative_error() < 1e-10);
            assert_eq!(r.distances.len(), 8); // init + 7 demo steps
        }
    }

    #[test]
    fn equivalence_experiment_is_order_stable_under_parallelism() {
        let mut rng = SeededRng::new(12, 0);
        let task = TaskSpec::sample(TaskKind::Trig, 4, 1, &mut rng).unwrap();
        let seeds = [5, 9, 1, 7];
        let a = equivalence_experiment(&task, 5, FeatureMapKind::EluPlusOne, &seeds, None).unwrap();
        let b = equivalence_experiment(&task, 5, FeatureMapKind::EluPlusOne, &seeds, None).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.distances, y.distances);
            assert_eq!(x.dual_prediction, y.dual_prediction);
        }
    }

    #[test]
    fn approximation_error_drops_with_feature_dimension() {
        let mut rng = SeededRng::new(13, 0);
        let task = TaskSpec::sample(TaskKind::Linear, 5, 1, &mut rng).unwrap();
        let rows = approximation_sweep(&task, &[4, 512], 9, 8, 99).unwrap();
        let small: Vec<f64> = rows.iter().filter(|r| r.d_r == 4).map(|r| r.mse).collect();
        let large: Vec<f64> = rows.iter().filter(|r| r.d_r == 512).map(|r| r.mse).collect();
        assert_eq!(small.len(), 9);
        assert!(median(&large) < median(&small));
    }

    #[test]
    fn approximation_sweep_is_deterministic_across_runs() {
        let mut rng = SeededRng::new(14, 0);
        let task = TaskSpec::sample(TaskKind::Linear, 4, 1, &mut rng).unwrap();
        let a = approximation_sweep(&task, &[8, 32], 4, 6, 5).unwrap();
        let b = approximation_sweep(&task, &[8, 32], 4, 6, 5).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.mse.to_bits(), y.mse.to_bits());
            assert_eq!(x.mae.to_bits(), y.mae.to_bits());
        }
    }

    #[test]
    fn median_handles_even_and_odd_lengths() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[5.0]), 5.0);
    }
}
