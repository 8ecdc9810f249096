//! Generalization diagnostics for the dual model.
//!
//! Two complementary tools: a closed-form surrogate for the
//! norm-constrained generalization bound, driven by the trace of the
//! feature-space Gram matrix of the observed context, and a Monte-Carlo
//! estimate of the actual generalization gap of the norm-constrained
//! empirical minimizer of the linear dual loss.

use rayon::prelude::*;

use crate::attention::AttentionWeights;
use crate::error::{CoreError, Result};
use crate::harness::TaskSpec;
use crate::kernel::{apply_feature_map_columns, FeatureMapSpec};
use crate::numerics::matrix::DenseMatrix;
use crate::numerics::rng::{stream_id, SeededRng};

/// Inputs to the generalization-bound surrogate.
#[derive(Debug, Clone, Copy)]
pub struct BoundInputs {
    /// Norm budget for the dual weight matrix, `‖W‖_F ≤ w`.
    pub w: f64,
    /// Bound on the value-vector norms.
    pub rho: f64,
    /// Output dimension of the attention layer.
    pub d_o: usize,
    /// Number of observed context tokens.
    pub n: usize,
    /// Confidence level: the bound holds with probability `1 − δ`.
    pub delta: f64,
    /// Optional effective-rank refinement; enables the variant that
    /// replaces the `√trace/N` complexity term with
    /// `√(trace·(5/N² + 1/(r·N³)))`.
    pub r: Option<f64>,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        if !(self.w.is_finite() && self.w > 0.0) {
            return Err(CoreError::InvalidParameter {
                name: "w",
                reason: format!("norm budget must be finite and positive, got {}", self.w),
            });
        }
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return Err(CoreError::InvalidParameter {
                name: "rho",
                reason: format!("value norm bound must be finite and positive, got {}", self.rho),
            });
        }
        if self.d_o == 0 {
            return Err(CoreError::InvalidParameter {
                name: "d_o",
                reason: "output dimension must be positive".into(),
            });
        }
        if self.n == 0 {
            return Err(CoreError::InvalidParameter {
                name: "n",
                reason: "need at least one context token".into(),
            });
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(CoreError::InvalidParameter {
                name: "delta",
                reason: format!("confidence level must lie in (0, 1), got {}", self.delta),
            });
        }
        if let Some(r) = self.r {
            if !(r.is_finite() && r > 0.0) {
                return Err(CoreError::InvalidParameter {
                    name: "r",
                    reason: format!("effective rank must be finite and positive, got {r}"),
                });
            }
        }
        Ok(())
    }
}

/// Feature-space Gram matrix of a token set and its trace.
#[derive(Debug, Clone)]
pub struct GramTrace {
    /// `K_S[i][j] = ⟨φ(W_K s_i), φ(W_K s_j)⟩`.
    pub k_s: DenseMatrix,
    /// `Σ_i ‖φ(W_K s_i)‖²`, the complexity driver of the bound.
    pub trace: f64,
}

/// Computes the Gram matrix of the feature-mapped keys of `s` (columns are
/// tokens) and its trace.
pub fn gram_trace(s: &DenseMatrix, w_k: &DenseMatrix, spec: &FeatureMapSpec) -> Result<GramTrace> {
    if s.cols() == 0 {
        return Err(CoreError::EmptyContext);
    }
    if w_k.cols() != s.rows() {
        return Err(CoreError::ShapeMismatch {
            op: "gram_trace",
            expected: format!("W_K with {} columns", s.rows()),
            got: format!("{:?}", w_k.shape()),
        });
    }
    let keys = w_k.matmul(s)?;
    let phi = apply_feature_map_columns(spec, &keys)?;
    let k_s = phi.transpose().matmul(&phi)?;
    let mut trace = 0.0;
    for i in 0..k_s.rows() {
        trace += k_s.get(i, i);
    }
    Ok(GramTrace { k_s, trace })
}

/// Evaluates the bound surrogate for the given trace:
///
/// * base form: `w·ρ·d_o·√trace / N + √(ln(1/δ) / N)`;
/// * with an effective rank `r`:
///   `w·ρ·d_o·√(trace·(5/N² + 1/(r·N³))) + √(ln(1/δ) / N)`.
///
/// All multiplicative constants hidden by the asymptotic statement are set
/// to one, so only trends (in `N`, `trace`, `r`) are meaningful.
pub fn bound_surrogate(inputs: &BoundInputs, trace: f64) -> Result<f64> {
    inputs.validate()?;
    if !(trace.is_finite() && trace >= 0.0) {
        return Err(CoreError::InvalidParameter {
            name: "trace",
            reason: format!("Gram trace must be finite and non-negative, got {trace}"),
        });
    }
    let n = inputs.n as f64;
    let scale = inputs.w * inputs.rho * inputs.d_o as f64;
    let complexity = match inputs.r {
        None => scale * trace.sqrt() / n,
        Some(r) => scale * (trace * (5.0 / (n * n) + 1.0 / (r * n * n * n))).sqrt(),
    };
    let confidence = ((1.0 / inputs.delta).ln() / n).sqrt();
    Ok(complexity + confidence)
}

/// Sum over tokens (columns of `s`) of the rank-one moment
/// `(W_V s_i)·φ(W_K s_i)ᵀ`, the quantity whose alignment between train and
/// evaluation samples controls the gap of the linear dual loss.
fn moment_matrix(s: &DenseMatrix, w: &AttentionWeights, spec: &FeatureMapSpec) -> Result<DenseMatrix> {
    let keys = w.w_k.matmul(s)?;
    let phi = apply_feature_map_columns(spec, &keys)?;
    let values = w.w_v.matmul(s)?;
    values.matmul(&phi.transpose())
}

/// Generalization gap of the norm-constrained minimizer of the linear dual
/// loss `ℓ(W; x) = −⟨W_V x, W φ(W_K x)⟩` over `‖W‖_F ≤ w`.
///
/// The empirical minimizer is `Ŵ = w·G_train/‖G_train‖_F` where `G` is the
/// token moment sum; evaluating on `M` fresh tokens gives
/// `gap = (w/M)·(‖G_eval‖_F − ⟨G_train/‖G_train‖_F, G_eval⟩)`, which is
/// non-negative by Cauchy–Schwarz and zero when the samples coincide.
pub fn gap_from_samples(
    train: &DenseMatrix,
    eval: &DenseMatrix,
    weights: &AttentionWeights,
    spec: &FeatureMapSpec,
    w: f64,
) -> Result<f64> {
    if train.cols() == 0 || eval.cols() == 0 {
        return Err(CoreError::EmptyContext);
    }
    let g_train = moment_matrix(train, weights, spec)?;
    let g_eval = moment_matrix(eval, weights, spec)?;
    let norm_train = g_train.frobenius_norm();
    if norm_train == 0.0 {
        return Err(CoreError::DegenerateMinimizer);
    }
    let alignment = g_train.hadamard(&g_eval)?.sum() / norm_train;
    Ok(w / eval.cols() as f64 * (g_eval.frobenius_norm() - alignment))
}

/// Gap estimates for one training-set size.
#[derive(Debug, Clone)]
pub struct GapRow {
    pub n: usize,
    /// One gap per seed, in seed order.
    pub gaps: Vec<f64>,
    pub median_gap: f64,
}

/// Estimates the generalization gap of the empirical dual minimizer as a
/// function of the training-set size. Each (seed, n) cell draws its own
/// deterministic stream: random projections on the token space, `n`
/// training tokens, and `eval_samples` evaluation tokens, all task-
/// distributed. Uses the deterministic elu+1 feature map so the only
/// randomness is the data and the projections.
pub fn empirical_gap(
    task: &TaskSpec,
    w: f64,
    n_list: &[usize],
    eval_samples: usize,
    seeds: &[u64],
) -> Result<Vec<GapRow>> {
    if !(w.is_finite() && w > 0.0) {
        return Err(CoreError::InvalidParameter {
            name: "w",
            reason: format!("norm budget must be finite and positive, got {w}"),
        });
    }
    if eval_samples == 0 {
        return Err(CoreError::InvalidParameter {
            name: "eval_samples",
            reason: "need at least one evaluation token".into(),
        });
    }
    if n_list.is_empty() || seeds.is_empty() {
        return Err(CoreError::InvalidParameter {
            name: "n_list/seeds",
            reason: "need at least one size and one seed".into(),
        });
    }
    let d = task.token_dim();
    let spec = FeatureMapSpec::elu_plus_one(d);
    n_list
        .iter()
        .map(|&n| {
            if n == 0 {
                return Err(CoreError::InvalidParameter {
                    name: "n_list",
                    reason: "training sizes must be positive".into(),
                });
            }
            let gaps: Vec<f64> = seeds
                .par_iter()
                .map(|&seed| {
                    let stream = stream_id(crate::harness::streams::GAP, n as u32);
                    let mut rng = SeededRng::new(seed, stream);
                    let weights = AttentionWeights::random(d, d, &mut rng);
                    let train = task.sample_tokens(n, &mut rng)?;
                    let eval = task.sample_tokens(eval_samples, &mut rng)?;
                    gap_from_samples(&train, &eval, &weights, &spec, w)
                })
                .collect::<Result<_>>()?;
            let median_gap = crate::harness::median(&gaps);
            Ok(GapRow { n, gaps, median_gap })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::TaskKind;
    use crate::numerics::linalg::symmetric_eigenvalues;
    use crate::numerics::matrix::dot;

    fn linear_task(seed: u64) -> TaskSpec {
        let mut r = SeededRng::new(seed, 0);
        TaskSpec::sample(TaskKind::Linear, 4, 1, &mut r).unwrap()
    }

    /// With zero inputs the random-feature map evaluates to the constant
    /// vector (1/√d_r)·1, so for a power-of-four feature count every Gram
    /// entry is exactly one and the trace is exactly the token count.
    #[test]
    fn zero_tokens_give_unit_gram_entries_for_random_features() {
        let mut rng = SeededRng::new(5, 0);
        let omega = rng.normal_matrix(16, 3, 1.0);
        let spec = FeatureMapSpec::PositiveRandomFeatures { omega };
        let s = DenseMatrix::zeros(3, 5);
        let w_k = rng.normal_matrix(3, 3, 1.0);
        let gt = gram_trace(&s, &w_k, &spec).unwrap();
        assert_eq!(gt.trace, 5.0);
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(gt.k_s.get(i, j), 1.0);
            }
        }
    }

    #[test]
    fn gram_matches_per_pair_feature_inner_products() {
        let mut rng = SeededRng::new(7, 0);
        let s = rng.normal_matrix(4, 6, 0.7);
        let w_k = rng.normal_matrix(4, 4, 0.5);
        for spec in [
            FeatureMapSpec::PositiveRandomFeatures {
                omega: rng.normal_matrix(32, 4, 1.0),
            },
            FeatureMapSpec::elu_plus_one(4),
        ] {
            let gt = gram_trace(&s, &w_k, &spec).unwrap();
            let mut brute_trace = 0.0;
            for i in 0..6 {
                let phi_i =
                    crate::kernel::apply_feature_map(&spec, &w_k.matvec(s.col(i)).unwrap()).unwrap();
                brute_trace += dot(&phi_i, &phi_i).unwrap();
                for j in 0..6 {
                    let phi_j = crate::kernel::apply_feature_map(&spec, &w_k.matvec(s.col(j)).unwrap())
                        .unwrap();
                    let want = dot(&phi_i, &phi_j).unwrap();
                    assert!(
                        (gt.k_s.get(i, j) - want).abs() <= 1e-12 * (1.0 + want.abs()),
                        "entry ({i},{j})"
                    );
                }
            }
            assert!((gt.trace - brute_trace).abs() <= 1e-12 * brute_trace.abs());
        }
    }

    #[test]
    fn gram_matrix_is_positive_semidefinite() {
        let mut rng = SeededRng::new(9, 0);
        let s = rng.normal_matrix(5, 8, 1.0);
        let w_k = rng.normal_matrix(5, 5, 1.0);
        let spec = FeatureMapSpec::elu_plus_one(5);
        let gt = gram_trace(&s, &w_k, &spec).unwrap();
        let eigs = symmetric_eigenvalues(&gt.k_s).unwrap();
        let floor = -1e-10 * gt.trace.max(1.0);
        for e in eigs {
            assert!(e >= floor, "eigenvalue {e} below {floor}");
        }
    }

    /// w = ρ = d_o = 1, trace = N = 4, δ = e⁻¹ gives exactly
    /// √4/4 + √(1/4) = 1.
    #[test]
    fn bound_surrogate_closed_form_point() {
        let b = BoundInputs {
            w: 1.0,
            rho: 1.0,
            d_o: 1,
            n: 4,
            delta: (-1.0_f64).exp(),
            r: None,
        };
        let got = bound_surrogate(&b, 4.0).unwrap();
        assert!((got - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bound_surrogate_decreases_with_sample_size_at_linear_trace() {
        let mut prev = f64::INFINITY;
        for n in [8usize, 16, 32, 64, 128, 256, 512] {
            let b = BoundInputs {
                w: 2.0,
                rho: 1.5,
                d_o: 6,
                n,
                delta: 0.05,
                r: None,
            };
            // Trace grows linearly with the token count (unit-norm features).
            let v = bound_surrogate(&b, n as f64).unwrap();
            assert!(v < prev, "bound must shrink: n={n}, {v} !< {prev}");
            prev = v;
        }
    }

    #[test]
    fn effective_rank_variant_decreases_in_r_and_rejects_nonpositive_r() {
        let base = BoundInputs {
            w: 1.0,
            rho: 1.0,
            d_o: 4,
            n: 32,
            delta: 0.1,
            r: Some(1.0),
        };
        let mut prev = f64::INFINITY;
        for r in [0.5, 1.0, 2.0, 8.0, 64.0] {
            let b = BoundInputs { r: Some(r), ..base };
            let v = bound_surrogate(&b, 32.0).unwrap();
            assert!(v < prev);
            prev = v;
        }
        let bad = BoundInputs { r: Some(0.0), ..base };
        assert!(matches!(
            bound_surrogate(&bad, 32.0),
            Err(CoreError::InvalidParameter { name: "r", .. })
        ));
        let neg = BoundInputs { r: Some(-3.0), ..base };
        assert!(bound_surrogate(&neg, 32.0).is_err());
    }

    #[test]
    fn bound_inputs_validation_rejects_bad_fields() {
        let good = BoundInputs {
            w: 1.0,
            rho: 1.0,
            d_o: 2,
            n: 3,
            delta: 0.5,
            r: None,
        };
        assert!(good.validate().is_ok());
        for bad in [
            BoundInputs { w: 0.0, ..good },
            BoundInputs { rho: -1.0, ..good },
            BoundInputs { d_o: 0, ..good },
            BoundInputs { n: 0, ..good },
            BoundInputs { delta: 0.0, ..good },
            BoundInputs { delta: 1.0, ..good },
            BoundInputs { w: f64::NAN, ..good },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn gap_is_zero_when_evaluating_on_the_training_sample() {
        let task = linear_task(11);
        let mut rng = SeededRng::new(13, 0);
        let d = task.token_dim();
        let weights = AttentionWeights::random(d, d, &mut rng);
        let spec = FeatureMapSpec::elu_plus_one(d);
        let s = task.sample_tokens(12, &mut rng).unwrap();
        let gap = gap_from_samples(&s, &s, &weights, &spec, 3.0).unwrap();
        assert!(gap.abs() <= 1e-12, "self-gap {gap}");
    }

    #[test]
    fn gap_is_nonnegative_and_linear_in_the_norm_budget() {
        let task = linear_task(17);
        let mut rng = SeededRng::new(19, 0);
        let d = task.token_dim();
        let weights = AttentionWeights::random(d, d, &mut rng);
        let spec = FeatureMapSpec::elu_plus_one(d);
        let train = task.sample_tokens(6, &mut rng).unwrap();
        let eval = task.sample_tokens(40, &mut rng).unwrap();
        let g1 = gap_from_samples(&train, &eval, &weights, &spec, 1.0).unwrap();
        let g2 = gap_from_samples(&train, &eval, &weights, &spec, 2.0).unwrap();
        assert!(g1 >= -1e-12);
        assert!((g2 - 2.0 * g1).abs() <= 1e-12 * (1.0 + g2.abs()));
    }

    #[test]
    fn zero_values_make_the_minimizer_degenerate() {
        let task = linear_task(23);
        let mut rng = SeededRng::new(29, 0);
        let d = task.token_dim();
        let mut weights = AttentionWeights::random(d, d, &mut rng);
        weights.w_v = DenseMatrix::zeros(d, d);
        let spec = FeatureMapSpec::elu_plus_one(d);
        let s = task.sample_tokens(5, &mut rng).unwrap();
        assert!(matches!(
            gap_from_samples(&s, &s, &weights, &spec, 1.0),
            Err(CoreError::DegenerateMinimizer)
        ));
    }

    #[test]
    fn larger_training_sets_shrink_the_median_gap() {
        let task = linear_task(31);
        let seeds: Vec<u64> = (0..10).collect();
        let rows = empirical_gap(&task, 1.0, &[4, 128], 64, &seeds).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].gaps.len(), 10);
        assert!(
            rows[1].median_gap <= rows[0].median_gap,
            "median gap at n=128 ({}) should not exceed n=4 ({})",
            rows[1].median_gap,
            rows[0].median_gap
        );
        // Determinism across invocations.
        let again = empirical_gap(&task, 1.0, &[4, 128], 64, &seeds).unwrap();
        assert_eq!(rows[0].gaps, again[0].gaps);
        assert_eq!(rows[1].gaps, again[1].gaps);
    }
}
