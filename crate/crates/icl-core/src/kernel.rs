//! Softmax-kernel feature maps and attention-approximation measurement.
//!
//! The softmax kernel `K(x, y) = exp(xᵀy)` linearizes the unnormalized part
//! of softmax attention: attention scores are kernel evaluations between
//! projected keys and the projected query. Two feature maps are provided
//! whose inner products stand in for the kernel:
//!
//! * **positive random features** `φ(x) = (1/√d_r) · exp(Ωx − ‖x‖²/2)`
//!   with `Ω` an i.i.d. standard-normal `d_r×d_o` draw — an unbiased Monte
//!   Carlo estimator of the kernel (the `1/√d_r` factor makes the inner
//!   product the empirical mean over rows; it cancels in any normalized
//!   attention, so adopting it cannot change attention outputs);
//! * **elu+1** `φ(x) = elu(x) + 1` — deterministic, dimension-preserving,
//!   strictly positive, but not unbiased for the kernel.
//!
//! Overflow policy: feature values are true values, not rescaled ones. If
//! a required exponent leaves the representable f64 range (above ≈700, or
//! so far below that the value underflows to exactly zero and would break
//! strict positivity) the call fails loudly rather than returning inf/0.
//! The one place a shared max-subtraction *is* used — with the compensating
//! constant provably cancelling — is the column-normalized approximation
//! report, where every feature column in a call shares one subtraction
//! constant that divides out of each normalized column.

use crate::error::{CoreError, Result};
use crate::numerics::autodiff::elu;
use crate::numerics::matrix::{column_softmax, dot, squared_norm, DenseMatrix};
use crate::numerics::rng::SeededRng;

/// Largest exponent handed to `exp` before the kernel/feature evaluation
/// is declared out of range (f64 overflows just above 709.78; the margin
/// keeps downstream sums representable too).
pub const EXPONENT_LIMIT: f64 = 700.0;

/// A softmax-kernel feature map φ.
#[derive(Debug, Clone)]
pub enum FeatureMapSpec {
    /// `φ(x) = (1/√d_r) · exp(Ωx − ‖x‖²/2)`, `Ω: d_r×d_o` i.i.d. N(0,1).
    PositiveRandomFeatures { omega: DenseMatrix },
    /// `φ(x) = elu(x) + 1` (so `d_r = d_o`).
    EluPlusOne { dim: usize },
}

impl FeatureMapSpec {
    /// Draws a fresh random-feature matrix from the given generator.
    pub fn positive_random_features(d_r: usize, d_o: usize, rng: &mut SeededRng) -> Self {
        FeatureMapSpec::PositiveRandomFeatures {
            omega: rng.normal_matrix(d_r, d_o, 1.0),
        }
    }

    pub fn elu_plus_one(dim: usize) -> Self {
        FeatureMapSpec::EluPlusOne { dim }
    }

    /// Output dimension d_r.
    pub fn feature_dim(&self) -> usize {
        match self {
            FeatureMapSpec::PositiveRandomFeatures { omega } => omega.rows(),
            FeatureMapSpec::EluPlusOne { dim } => *dim,
        }
    }

    /// Expected input dimension d_o.
    pub fn input_dim(&self) -> usize {
        match self {
            FeatureMapSpec::PositiveRandomFeatures { omega } => omega.cols(),
            FeatureMapSpec::EluPlusOne { dim } => *dim,
        }
    }

    /// Short name used in reports and CSV columns.
    pub fn variant_name(&self) -> &'static str {
        match self {
            FeatureMapSpec::PositiveRandomFeatures { .. } => "prf",
            FeatureMapSpec::EluPlusOne { .. } => "elu_plus_one",
        }
    }
}

/// A feature-map choice that has not been materialized yet (for PRF the
/// random matrix Ω is drawn at materialization time from a caller-chosen
/// stream; the ELU map is deterministic).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMapKind {
    PositiveRandomFeatures { d_r: usize },
    EluPlusOne,
}

impl FeatureMapKind {
    /// Builds the concrete map for inputs of dimension `d_o`.
    pub fn materialize(&self, d_o: usize, rng: &mut SeededRng) -> Result<FeatureMapSpec> {
        match self {
            FeatureMapKind::PositiveRandomFeatures { d_r } => {
                if *d_r == 0 {
                    return Err(CoreError::InvalidParameter {
                        name: "d_r",
                        reason: "feature dimension must be positive".into(),
                    });
                }
                Ok(FeatureMapSpec::positive_random_features(*d_r, d_o, rng))
            }
            FeatureMapKind::EluPlusOne => Ok(FeatureMapSpec::elu_plus_one(d_o)),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FeatureMapKind::PositiveRandomFeatures { .. } => "prf",
            FeatureMapKind::EluPlusOne => "elu_plus_one",
        }
    }
}

/// Exact softmax kernel `exp(xᵀy)`.
///
/// Also satisfies the Gaussian-kernel relation
/// `exp(xᵀy) = exp((‖x‖² + ‖y‖²)/2) · exp(−‖x − y‖²/2)`,
/// which the tests check numerically.
pub fn softmax_kernel_exact(x: &[f64], y: &[f64]) -> Result<f64> {
    let e = dot(x, y)?;
    if e.abs() > EXPONENT_LIMIT {
        return Err(CoreError::KernelRange {
            op: "softmax_kernel_exact",
            exponent: e,
        });
    }
    Ok(e.exp())
}

/// Applies the feature map to one vector. All outputs are strictly
/// positive; a value that would overflow or underflow to zero is an error.
pub fn apply_feature_map(spec: &FeatureMapSpec, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != spec.input_dim() {
        return Err(CoreError::ShapeMismatch {
            op: "apply_feature_map",
            expected: format!("input dim {}", spec.input_dim()),
            got: format!("{}", x.len()),
        });
    }
    match spec {
        FeatureMapSpec::PositiveRandomFeatures { omega } => {
            let proj = omega.matvec(x)?;
            let half_sq = 0.5 * squared_norm(x);
            let inv_sqrt_dr = 1.0 / (omega.rows() as f64).sqrt();
            let mut out = Vec::with_capacity(proj.len());
            for p in proj {
                let e = p - half_sq;
                if e > EXPONENT_LIMIT {
                    return Err(CoreError::KernelRange {
                        op: "apply_feature_map",
                        exponent: e,
                    });
                }
                let v = e.exp() * inv_sqrt_dr;
                if v <= 0.0 {
                    return Err(CoreError::KernelRange {
                        op: "apply_feature_map (underflow to zero)",
                        exponent: e,
                    });
                }
                out.push(v);
            }
            Ok(out)
        }
        FeatureMapSpec::EluPlusOne { .. } => {
            // elu(x) > −1 for finite x, so elu(x) + 1 > 0 always; extreme
            // negatives saturate to a tiny positive value, never to zero.
            Ok(x.iter().map(|&v| elu(v) + 1.0).collect())
        }
    }
}

/// Applies the feature map column-wise: column `j` of the result is
/// `φ(M[:, j])`. Same range policy as [`apply_feature_map`].
pub fn apply_feature_map_columns(spec: &FeatureMapSpec, m: &DenseMatrix) -> Result<DenseMatrix> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(m.cols());
    for j in 0..m.cols() {
        cols.push(apply_feature_map(spec, m.col(j))?);
    }
    let views: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
    DenseMatrix::from_columns(&views)
}

/// Feature columns for *normalized-only* use: for random features the
/// exponents are shifted by one shared constant `c = max exponent` before
/// exponentiation, so entries stay representable for inputs whose true
/// feature values would overflow. Every column in the call shares the same
/// `c`, hence any column-normalized quantity built from these features
/// (attention weights, the approximation report) is unchanged: numerator
/// and denominator both carry `e^{-c}`.
///
/// The returned values are NOT the true feature values (they are scaled by
/// `e^{-c}`), which is why this function is private to the crate and only
/// reachable through operations that normalize.
pub(crate) fn stabilized_feature_columns(spec: &FeatureMapSpec, m: &DenseMatrix) -> Result<DenseMatrix> {
    match spec {
        FeatureMapSpec::EluPlusOne { .. } => apply_feature_map_columns(spec, m),
        FeatureMapSpec::PositiveRandomFeatures { omega } => {
            let proj = omega.matmul(m)?; // d_r × n
            let (d_r, n) = proj.shape();
            let mut exponents = vec![0.0_f64; d_r * n];
            let mut c = f64::NEG_INFINITY;
            for j in 0..n {
                let half_sq = 0.5 * squared_norm(m.col(j));
                let pcol = proj.col(j);
                for i in 0..d_r {
                    let e = pcol[i] - half_sq;
                    exponents[i + j * d_r] = e;
                    c = c.max(e);
                }
            }
            let inv_sqrt_dr = 1.0 / (d_r as f64).sqrt();
            let data: Vec<f64> = exponents.iter().map(|&e| (e - c).exp() * inv_sqrt_dr).collect();
            DenseMatrix::from_vec(d_r, n, data)
        }
    }
}

/// Output of [`attention_approx_report`].
#[derive(Debug, Clone)]
pub struct AttentionApproxReport {
    /// Temperature-scaled exact softmax attention matrix (n×n).
    pub a_exact: DenseMatrix,
    /// Feature-map approximation, column-normalized (n×n).
    pub a_hat: DenseMatrix,
    /// Mean squared entrywise deviation.
    pub mse: f64,
    /// Mean absolute entrywise deviation.
    pub mae: f64,
}

/// Compares exact softmax self-attention against its feature-map
/// approximation on the token matrix `x` (d_i×n, n ≥ 1).
///
/// The exact side is `column_softmax((W_K X)ᵀ(W_Q X)/√d_o)`. On the
/// approximation side the `1/√d_o` temperature is folded in symmetrically:
/// projected keys and queries are both pre-scaled by `d_o^{-1/4}` (so the
/// kernel of the scaled vectors is `exp(kᵀq/√d_o)`), features are taken of
/// the scaled projections, and each column is normalized by its sum.
pub fn attention_approx_report(
    x: &DenseMatrix,
    w_k: &DenseMatrix,
    w_q: &DenseMatrix,
    spec: &FeatureMapSpec,
) -> Result<AttentionApproxReport> {
    let keys = w_k.matmul(x)?;
    let queries = w_q.matmul(x)?;
    let d_o = keys.rows();
    let temp = (d_o as f64).sqrt();

    let scores = keys.transpose().matmul(&queries)?.scale(1.0 / temp)?;
    let a_exact = column_softmax(&scores)?;

    let pre = (d_o as f64).powf(-0.25);
    let phi_k = stabilized_feature_columns(spec, &keys.scale(pre)?)?;
    let phi_q = stabilized_feature_columns(spec, &queries.scale(pre)?)?;
    let unnormalized = phi_k.transpose().matmul(&phi_q)?;

    let n = unnormalized.cols();
    let mut data = Vec::with_capacity(n * n);
    for j in 0..n {
        let col = unnormalized.col(j);
        let d: f64 = col.iter().sum();
        if d <= 0.0 {
            return Err(CoreError::DegenerateNormalization {
                op: "attention_approx_report",
                divisor: d,
            });
        }
        data.extend(col.iter().map(|v| v / d));
    }
    let a_hat = DenseMatrix::from_vec(n, n, data)?;

    let k = (n * n) as f64;
    let mut mse = 0.0;
    let mut mae = 0.0;
    for (e, h) in a_exact.as_slice().iter().zip(a_hat.as_slice()) {
        let d = e - h;
        mse += d * d / k;
        mae += d.abs() / k;
    }
    Ok(AttentionApproxReport { a_exact, a_hat, mse, mae })
}

/// Output of [`unbiasedness_probe`].
#[derive(Debug, Clone)]
pub struct UnbiasednessProbe {
    /// Monte Carlo mean of `⟨φ(x), φ(y)⟩` over independent feature draws.
    pub mean: f64,
    /// Standard error of that mean.
    pub std_error: f64,
    /// The quantity being estimated, `exp(xᵀy)`.
    pub target: f64,
}

/// Estimates `exp(xᵀy)` by averaging `⟨φ(x), φ(y)⟩` over `trials`
/// independent draws of the random-feature matrix. Only meaningful for the
/// random-feature variant; the deterministic elu+1 map is not an unbiased
/// kernel estimator and is rejected.
pub fn unbiasedness_probe(
    spec: &FeatureMapSpec,
    x: &[f64],
    y: &[f64],
    trials: usize,
    rng: &mut SeededRng,
) -> Result<UnbiasednessProbe> {
    let (d_r, d_o) = match spec {
        FeatureMapSpec::PositiveRandomFeatures { omega } => (omega.rows(), omega.cols()),
        FeatureMapSpec::EluPlusOne { .. } => {
            return Err(CoreError::UnsupportedVariant {
                op: "unbiasedness_probe",
                detail: "elu+1 is not an unbiased estimator of the softmax kernel".into(),
            })
        }
    };
    if trials == 0 {
        return Err(CoreError::InvalidParameter {
            name: "trials",
            reason: "need at least one trial".into(),
        });
    }
    let target = softmax_kernel_exact(x, y)?;
    let mut estimates = Vec::with_capacity(trials);
    for _ in 0..trials {
        let fresh = FeatureMapSpec::positive_random_features(d_r, d_o, rng);
        let phi_x = apply_feature_map(&fresh, x)?;
        let phi_y = apply_feature_map(&fresh, y)?;
        estimates.push(dot(&phi_x, &phi_y)?);
    }
    let mean = estimates.iter().sum::<f64>() / trials as f64;
    let var = if trials > 1 {
        estimates.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (trials as f64 - 1.0)
    } else {
        0.0
    };
    let std_error = (var / trials as f64).sqrt();
    Ok(UnbiasednessProbe { mean, std_error, target })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::SeededRng;

    #[test]
    fn kernel_of_zero_vector_is_one() {
        assert_eq!(softmax_kernel_exact(&[0.0, 0.0], &[1.0, -3.0]).unwrap(), 1.0);
        assert_eq!(softmax_kernel_exact(&[2.0, 5.0], &[0.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn kernel_log2_example() {
        let v = softmax_kernel_exact(&[2.0_f64.ln(), 0.0], &[1.0, 0.0]).unwrap();
        assert!((v - 2.0).abs() < 1e-15);
    }

    #[test]
    fn kernel_overflow_is_an_error() {
        let err = softmax_kernel_exact(&[800.0], &[1.0]).unwrap_err();
        assert!(matches!(err, CoreError::KernelRange { .. }));
    }

    #[test]
    fn gaussian_relation_holds() {
        // exp(xᵀy) = exp((‖x‖²+‖y‖²)/2) · exp(−‖x−y‖²/2)
        let mut rng = SeededRng::new(21, 0);
        for _ in 0..50 {
            let x = rng.normal_vec(6);
            let y = rng.normal_vec(6);
            let lhs = softmax_kernel_exact(&x, &y).unwrap();
            let diff_sq: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
            let rhs = (0.5 * (squared_norm(&x) + squared_norm(&y))).exp() * (-0.5 * diff_sq).exp();
            assert!(((lhs - rhs) / rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn prf_at_zero_is_inverse_sqrt_dr() {
        let mut rng = SeededRng::new(1, 0);
        let spec = FeatureMapSpec::positive_random_features(16, 3, &mut rng);
        let f = apply_feature_map(&spec, &[0.0, 0.0, 0.0]).unwrap();
        for v in f {
            assert_eq!(v, 0.25); // 1/√16
        }
    }

    #[test]
    fn elu_plus_one_at_zero_is_ones() {
        let spec = FeatureMapSpec::elu_plus_one(4);
        let f = apply_feature_map(&spec, &[0.0; 4]).unwrap();
        assert_eq!(f, vec![1.0; 4]);
    }

    #[test]
    fn feature_outputs_are_strictly_positive() {
        let mut rng = SeededRng::new(2, 0);
        let prf = FeatureMapSpec::positive_random_features(32, 5, &mut rng);
        let elu = FeatureMapSpec::elu_plus_one(5);
        for _ in 0..20 {
            let x = rng.normal_vec(5);
            assert!(apply_feature_map(&prf, &x).unwrap().iter().all(|&v| v > 0.0));
            assert!(apply_feature_map(&elu, &x).unwrap().iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn prf_inner_products_approach_the_kernel() {
        // Each feature contributes exp(ωᵀ(x+y) − (‖x‖²+‖y‖²)/2), whose
        // relative variance around exp(xᵀy) is exp(‖x+y‖²) − 1, so the
        // d_r-feature estimate should land within three analytic standard
        // errors of the kernel for essentially every draw.
        let mut meta = SeededRng::new(9, 0);
        let x = meta.normal_vec(4).iter().map(|v| v * 0.7).collect::<Vec<_>>();
        let y = meta.normal_vec(4).iter().map(|v| v * 0.7).collect::<Vec<_>>();
        let target = softmax_kernel_exact(&x, &y).unwrap();
        let d_r = 100_000;
        let z2: f64 = x.iter().zip(&y).map(|(a, b)| (a + b) * (a + b)).sum();
        let rel_se = ((z2.exp() - 1.0) / d_r as f64).sqrt();
        let mut hits = 0;
        for seed in 0..10 {
            let mut rng = SeededRng::new(100 + seed, 0);
            let spec = FeatureMapSpec::positive_random_features(d_r, 4, &mut rng);
            let phi_x = apply_feature_map(&spec, &x).unwrap();
            let phi_y = apply_feature_map(&spec, &y).unwrap();
            let est = dot(&phi_x, &phi_y).unwrap();
            if ((est - target) / target).abs() < 3.0 * rel_se {
                hits += 1;
            }
        }
        assert!(hits >= 9, "only {hits}/10 seeds within 3 standard errors");
    }

    #[test]
    fn single_token_report_is_trivially_exact() {
        let mut rng = SeededRng::new(3, 0);
        let x = rng.normal_matrix(4, 1, 1.0);
        let w_k = rng.normal_matrix(4, 4, 0.5);
        let w_q = rng.normal_matrix(4, 4, 0.5);
        let spec = FeatureMapSpec::positive_random_features(8, 4, &mut rng);
        let rep = attention_approx_report(&x, &w_k, &w_q, &spec).unwrap();
        assert_eq!(rep.a_exact.get(0, 0), 1.0);
        assert_eq!(rep.a_hat.get(0, 0), 1.0);
        assert_eq!(rep.mse, 0.0);
        assert_eq!(rep.mae, 0.0);
    }

    #[test]
    fn identical_tokens_give_identical_report_columns() {
        let mut rng = SeededRng::new(4, 0);
        let col = rng.normal_vec(3);
        let x = DenseMatrix::from_columns(&[&col, &col, &col]).unwrap();
        let w_k = rng.normal_matrix(3, 3, 0.5);
        let w_q = rng.normal_matrix(3, 3, 0.5);
        let spec = FeatureMapSpec::positive_random_features(16, 3, &mut rng);
        let rep = attention_approx_report(&x, &w_k, &w_q, &spec).unwrap();
        for m in [&rep.a_exact, &rep.a_hat] {
            for j in 1..3 {
                for i in 0..3 {
                    assert!((m.get(i, j) - m.get(i, 0)).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn report_columns_are_convex_weights() {
        let mut rng = SeededRng::new(5, 0);
        let x = rng.normal_matrix(4, 6, 1.0);
        let w_k = rng.normal_matrix(4, 4, 0.5);
        let w_q = rng.normal_matrix(4, 4, 0.5);
        let spec = FeatureMapSpec::positive_random_features(64, 4, &mut rng);
        let rep = attention_approx_report(&x, &w_k, &w_q, &spec).unwrap();
        for m in [&rep.a_exact, &rep.a_hat] {
            for j in 0..6 {
                let s: f64 = m.col(j).iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
                assert!(m.col(j).iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn stabilized_features_preserve_normalized_columns() {
        // With benign inputs the stabilized path and the plain path must
        // give the same normalized attention columns (the shared constant
        // cancels); with extreme inputs only the stabilized path survives.
        let mut rng = SeededRng::new(6, 0);
        let spec = FeatureMapSpec::positive_random_features(32, 3, &mut rng);
        let m = rng.normal_matrix(3, 4, 1.0);
        let plain = apply_feature_map_columns(&spec, &m).unwrap();
        let stab = stabilized_feature_columns(&spec, &m).unwrap();
        for j in 0..4 {
            let ps: f64 = plain.col(j).iter().sum();
            let ss: f64 = stab.col(j).iter().sum();
            for i in 0..32 {
                let a = plain.get(i, j) / ps;
                let b = stab.get(i, j) / ss;
                assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
        let extreme = m.scale(40.0).unwrap(); // ‖x‖² ≈ thousands: plain overflows
        assert!(apply_feature_map_columns(&spec, &extreme).is_err());
        assert!(stabilized_feature_columns(&spec, &extreme).is_ok());
    }

    #[test]
    fn unbiasedness_probe_zero_vectors() {
        let mut rng = SeededRng::new(7, 0);
        let spec = FeatureMapSpec::positive_random_features(64, 2, &mut rng);
        let p = unbiasedness_probe(&spec, &[0.0, 0.0], &[0.0, 0.0], 8, &mut rng).unwrap();
        assert_eq!(p.mean, 1.0);
        assert_eq!(p.std_error, 0.0);
        assert_eq!(p.target, 1.0);
    }

    #[test]
    fn unbiasedness_probe_hits_log2_target() {
        // xᵀy = ln 2 → target 2; the Monte Carlo mean should land within
        // three standard errors.
        let mut rng = SeededRng::new(8, 0);
        let spec = FeatureMapSpec::positive_random_features(1024, 2, &mut rng);
        let x = [2.0_f64.ln().sqrt(), 0.0];
        let y = [2.0_f64.ln().sqrt(), 0.0];
        let p = unbiasedness_probe(&spec, &x, &y, 200, &mut rng).unwrap();
        assert!((p.target - 2.0).abs() < 1e-12);
        assert!((p.mean - p.target).abs() <= 3.0 * p.std_error, "mean {} se {}", p.mean, p.std_error);
    }

    #[test]
    fn probe_standard_error_shrinks_with_feature_dim() {
        // Estimator variance scales as 1/d_r, so quadrupling d_r should
        // halve the standard error within sampling noise. Small vector
        // norms keep the per-feature terms light-tailed enough for the
        // sample standard deviation to be stable.
        let mut meta = SeededRng::new(10, 0);
        let x = meta.normal_vec(3).iter().map(|v| v * 0.4).collect::<Vec<_>>();
        let y = meta.normal_vec(3).iter().map(|v| v * 0.4).collect::<Vec<_>>();
        let mut ses = Vec::new();
        for d_r in [256, 1024] {
            let mut rng = SeededRng::new(11, 0);
            let spec = FeatureMapSpec::positive_random_features(d_r, 3, &mut rng);
            let p = unbiasedness_probe(&spec, &x, &y, 200, &mut rng).unwrap();
            ses.push(p.std_error);
        }
        let ratio = ses[0] / ses[1]; // expect ≈ 2 (= √(1024/256))
        assert!(ratio > 1.4 && ratio < 2.8, "ratio {ratio}");
    }

    #[test]
    fn probe_rejects_elu_variant() {
        let spec = FeatureMapSpec::elu_plus_one(2);
        let mut rng = SeededRng::new(12, 0);
        assert!(matches!(
            unbiasedness_probe(&spec, &[0.0, 0.0], &[0.0, 0.0], 4, &mut rng),
            Err(CoreError::UnsupportedVariant { .. })
        ));
    }
}
