//! Attention layers and their variants.
//!
//! The unmodified operations come in two flavours that the equivalence
//! suite plays against each other:
//!
//! * [`exact_attention_query`] — softmax attention evaluated literally:
//!   `h = W_V X · softmax((W_K X)ᵀ W_Q x_q / √d_o)` (temperature optional);
//! * [`kernel_attention_query`] — the kernel rewrite
//!   `h = (1/D) Σ_j (W_V x_j) · k(W_K x_j, W_Q x_q)` with
//!   `D = Σ_j k(W_K x_j, W_Q x_q)`, where `k` is the exact softmax kernel
//!   or a feature-map inner product ([`KernelEval`]).
//!
//! On top of these sit the feed-forward layer with its ReLU-mask linear
//! form ([`ffn_forward`], [`wf_rank_report`]), stacked prefix attention
//! ([`prefixlm_stack_forward`]), and the modified variants: value-side
//! regularization, key/value augmentation, negative-sample mixing, and a
//! ridge-regression form.

use crate::error::{CoreError, Result};
use crate::kernel::{apply_feature_map, apply_feature_map_columns, softmax_kernel_exact, FeatureMapSpec};
use crate::numerics::autodiff::{elu, gelu};
use crate::numerics::linalg::{cholesky_solve, lu_solve};
use crate::numerics::matrix::{column_softmax, DenseMatrix};
use crate::numerics::rng::SeededRng;

/// Query/key/value projection triple. All three are `d_o×d_i`.
#[derive(Debug, Clone)]
pub struct AttentionWeights {
    pub w_q: DenseMatrix,
    pub w_k: DenseMatrix,
    pub w_v: DenseMatrix,
}

impl AttentionWeights {
    pub fn new(w_q: DenseMatrix, w_k: DenseMatrix, w_v: DenseMatrix) -> Result<Self> {
        if w_q.shape() != w_k.shape() || w_q.shape() != w_v.shape() {
            return Err(CoreError::ShapeMismatch {
                op: "AttentionWeights::new",
                expected: format!("three {}x{} matrices", w_q.rows(), w_q.cols()),
                got: format!(
                    "W_Q {:?}, W_K {:?}, W_V {:?}",
                    w_q.shape(),
                    w_k.shape(),
                    w_v.shape()
                ),
            });
        }
        Ok(Self { w_q, w_k, w_v })
    }

    /// I.i.d. normal entries scaled by `1/√d_i` — the documented
    /// initialization for trained layers.
    pub fn random(d_o: usize, d_i: usize, rng: &mut SeededRng) -> Self {
        let s = 1.0 / (d_i as f64).sqrt();
        Self {
            w_q: rng.normal_matrix(d_o, d_i, s),
            w_k: rng.normal_matrix(d_o, d_i, s),
            w_v: rng.normal_matrix(d_o, d_i, s),
        }
    }

    /// Unscaled standard-normal entries (used by the rank experiment).
    pub fn standard_normal(d_o: usize, d_i: usize, rng: &mut SeededRng) -> Self {
        Self {
            w_q: rng.normal_matrix(d_o, d_i, 1.0),
            w_k: rng.normal_matrix(d_o, d_i, 1.0),
            w_v: rng.normal_matrix(d_o, d_i, 1.0),
        }
    }

    pub fn d_o(&self) -> usize {
        self.w_q.rows()
    }

    pub fn d_i(&self) -> usize {
        self.w_q.cols()
    }
}

/// Feed-forward parameters: `output = W_2 · relu(W_1 h + b_1) + b_2`.
#[derive(Debug, Clone)]
pub struct FfnWeights {
    pub w1: DenseMatrix,      // d_h × d_o
    pub b1: Vec<f64>,         // d_h
    pub w2: DenseMatrix,      // d_o × d_h
    pub b2: Vec<f64>,         // d_o
}

impl FfnWeights {
    pub fn new(w1: DenseMatrix, b1: Vec<f64>, w2: DenseMatrix, b2: Vec<f64>) -> Result<Self> {
        let d_h = w1.rows();
        let d_o = w2.rows();
        if b1.len() != d_h || w2.cols() != d_h || b2.len() != d_o {
            return Err(CoreError::ShapeMismatch {
                op: "FfnWeights::new",
                expected: format!("W_1 {d_h}×d, b_1 len {d_h}, W_2 d×{d_h}, b_2 len d"),
                got: format!(
                    "W_1 {:?}, b_1 len {}, W_2 {:?}, b_2 len {}",
                    w1.shape(),
                    b1.len(),
                    w2.shape(),
                    b2.len()
                ),
            });
        }
        if !b1.iter().chain(b2.iter()).all(|v| v.is_finite()) {
            return Err(CoreError::NonFinite { op: "FfnWeights::new" });
        }
        Ok(Self { w1, b1, w2, b2 })
    }

    /// Standard-normal weights and biases (the rank experiment's sampling).
    pub fn standard_normal(d_o: usize, d_h: usize, rng: &mut SeededRng) -> Self {
        Self {
            w1: rng.normal_matrix(d_h, d_o, 1.0),
            b1: rng.normal_vec(d_h),
            w2: rng.normal_matrix(d_o, d_h, 1.0),
            b2: rng.normal_vec(d_o),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.rows()
    }
}

/// How a context is split into demonstrations, prior queries, and the
/// query token itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContextLayout {
    /// Number of demonstration tokens (N ≥ 1).
    pub n_demos: usize,
    /// Number of prior-query tokens in the context (T ≥ 0).
    pub n_prior_queries: usize,
    /// Whether the query token attends to itself (i.e. its own column is
    /// part of the attended context, grouped with the prior-query block).
    pub include_query_self: bool,
}

impl ContextLayout {
    pub fn new(n_demos: usize, n_prior_queries: usize, include_query_self: bool) -> Result<Self> {
        if n_demos == 0 {
            return Err(CoreError::InvalidParameter {
                name: "n_demos",
                reason: "need at least one demonstration token".into(),
            });
        }
        Ok(Self {
            n_demos,
            n_prior_queries,
            include_query_self,
        })
    }

    /// The standard experimental layout: N demonstrations, no prior
    /// queries, query attends to itself.
    pub fn demos_with_self(n_demos: usize) -> Self {
        Self {
            n_demos,
            n_prior_queries: 0,
            include_query_self: true,
        }
    }
}

/// Activation for augmentation MLPs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// Exact erf-based GELU.
    Gelu,
    /// Exponential linear unit (α = 1).
    Elu,
}

impl Activation {
    fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Gelu => gelu(x),
            Activation::Elu => elu(x),
        }
    }
}

/// A column-wise augmentation `g` applied to projected keys or values.
///
/// The three shapes:
/// * `Identity` — `g(x) = x`;
/// * `Mlp` — `g(x) = σ(W_depth · σ(… σ(W_1 x)))`, one or two bias-free
///   layers, final output dimension equal to the input's;
/// * `ParallelMlp` — `g(x) = x + c · W_2 σ(W_1 x)`, a residual branch with
///   GELU activation and a widened hidden layer.
#[derive(Debug, Clone)]
pub enum Augmentation {
    Identity,
    Mlp {
        activation: Activation,
        /// One (d×d) or two ([hidden×d, d×hidden]) bias-free layers.
        layers: Vec<DenseMatrix>,
    },
    ParallelMlp {
        c: f64,
        w1: DenseMatrix, // hidden × d
        w2: DenseMatrix, // d × hidden
    },
}

impl Augmentation {
    pub fn identity() -> Self {
        Augmentation::Identity
    }

    /// One bias-free layer `σ(W x)`, W initialized N(0, 1/d).
    pub fn mlp_one_layer(dim: usize, activation: Activation, rng: &mut SeededRng) -> Self {
        let s = 1.0 / (dim as f64).sqrt();
        Augmentation::Mlp {
            activation,
            layers: vec![rng.normal_matrix(dim, dim, s)],
        }
    }

    /// Two bias-free layers `σ(W_2 σ(W_1 x))` with the given hidden width.
    pub fn mlp_two_layer(dim: usize, hidden: usize, activation: Activation, rng: &mut SeededRng) -> Self {
        let s1 = 1.0 / (dim as f64).sqrt();
        let s2 = 1.0 / (hidden as f64).sqrt();
        Augmentation::Mlp {
            activation,
            layers: vec![rng.normal_matrix(hidden, dim, s1), rng.normal_matrix(dim, hidden, s2)],
        }
    }

    /// Residual branch `x + c·W_2 σ(W_1 x)` with hidden width `2·dim`.
    pub fn parallel_mlp(dim: usize, c: f64, rng: &mut SeededRng) -> Self {
        let hidden = 2 * dim;
        let s1 = 1.0 / (dim as f64).sqrt();
        let s2 = 1.0 / (hidden as f64).sqrt();
        Augmentation::ParallelMlp {
            c,
            w1: rng.normal_matrix(hidden, dim, s1),
            w2: rng.normal_matrix(dim, hidden, s2),
        }
    }

    /// Applies `g` to every column of `m`; the output keeps `m`'s shape.
    pub fn apply_columns(&self, m: &DenseMatrix) -> Result<DenseMatrix> {
        let out = match self {
            Augmentation::Identity => m.clone(),
            Augmentation::Mlp { activation, layers } => {
                if layers.is_empty() || layers.len() > 2 {
                    return Err(CoreError::InvalidParameter {
                        name: "layers",
                        reason: format!("augmentation MLP supports depth 1 or 2, got {}", layers.len()),
                    });
                }
                let mut h = m.clone();
                for w in layers {
                    h = w.matmul(&h)?.map("augment_activation", |x| activation.apply(x))?;
                }
                h
            }
            Augmentation::ParallelMlp { c, w1, w2 } => {
                let hidden = w1.matmul(m)?.map("parallel_gelu", gelu)?;
                m.add(&w2.matmul(&hidden)?.scale(*c)?)?
            }
        };
        if out.shape() != m.shape() {
            return Err(CoreError::ShapeMismatch {
                op: "Augmentation::apply_columns",
                expected: format!("{:?} (same as input)", m.shape()),
                got: format!("{:?}", out.shape()),
            });
        }
        Ok(out)
    }

    /// The trainable weight matrices, in a fixed order.
    pub fn weights(&self) -> Vec<&DenseMatrix> {
        match self {
            Augmentation::Identity => vec![],
            Augmentation::Mlp { layers, .. } => layers.iter().collect(),
            Augmentation::ParallelMlp { w1, w2, .. } => vec![w1, w2],
        }
    }

    /// Replaces the trainable weights (same order as [`Self::weights`]).
    pub fn set_weights(&mut self, new: Vec<DenseMatrix>) -> Result<()> {
        match self {
            Augmentation::Identity => {
                if !new.is_empty() {
                    return Err(CoreError::InvalidParameter {
                        name: "weights",
                        reason: "identity augmentation has no weights".into(),
                    });
                }
            }
            Augmentation::Mlp { layers, .. } => {
                if new.len() != layers.len() {
                    return Err(CoreError::InvalidParameter {
                        name: "weights",
                        reason: format!("expected {} matrices, got {}", layers.len(), new.len()),
                    });
                }
                *layers = new;
            }
            Augmentation::ParallelMlp { w1, w2, .. } => {
                if new.len() != 2 {
                    return Err(CoreError::InvalidParameter {
                        name: "weights",
                        reason: format!("expected 2 matrices, got {}", new.len()),
                    });
                }
                let mut it = new.into_iter();
                *w1 = it.next().expect("two matrices");
                *w2 = it.next().expect("two matrices");
            }
        }
        Ok(())
    }
}

/// Hyperparameters of the modified attention variants. Neutral values
/// (`alpha = 0`, `beta = 0`, identity augmentations) reproduce the
/// unmodified layer.
#[derive(Debug, Clone)]
pub struct ModificationConfig {
    /// Value-side down-weighting of the non-demonstration block.
    pub alpha: f64,
    /// Negative-sample mixing weight.
    pub beta: f64,
    /// Negative samples per token (used when `beta ≠ 0`).
    pub k: usize,
    /// Augmentation of projected values.
    pub g1: Augmentation,
    /// Augmentation of projected keys.
    pub g2: Augmentation,
}

impl ModificationConfig {
    /// The configuration that reproduces unmodified attention.
    pub fn neutral() -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
            k: 0,
            g1: Augmentation::Identity,
            g2: Augmentation::Identity,
        }
    }

    /// Checks `k` against the number of demonstrations.
    pub fn validate(&self, n_demos: usize) -> Result<()> {
        if !self.alpha.is_finite() || !self.beta.is_finite() {
            return Err(CoreError::NonFinite {
                op: "ModificationConfig::validate",
            });
        }
        if self.beta != 0.0 && (self.k == 0 || self.k > n_demos.saturating_sub(1)) {
            return Err(CoreError::InvalidParameter {
                name: "k",
                reason: format!(
                    "negative-sample count must satisfy 1 ≤ k ≤ N−1 = {}, got {}",
                    n_demos.saturating_sub(1),
                    self.k
                ),
            });
        }
        Ok(())
    }
}

/// Kernel evaluation strategy for the kernelized attention path.
#[derive(Debug, Clone, Copy)]
pub enum KernelEval<'a> {
    /// The exact softmax kernel `exp(kᵀq)` — no approximation, no
    /// temperature; algebraically identical to softmax attention without
    /// the `√d_o` divisor.
    Exact,
    /// Inner products of the given feature map.
    Features(&'a FeatureMapSpec),
}

fn check_query_dims(x_ctx: &DenseMatrix, x_q: &[f64], w: &AttentionWeights, op: &'static str) -> Result<()> {
    if x_ctx.rows() != w.d_i() || x_q.len() != w.d_i() {
        return Err(CoreError::ShapeMismatch {
            op,
            expected: format!("token dim {}", w.d_i()),
            got: format!("context rows {}, query len {}", x_ctx.rows(), x_q.len()),
        });
    }
    Ok(())
}

/// Softmax attention output for one query:
/// `h = W_V X · softmax((W_K X)ᵀ W_Q x_q / divisor)` with
/// `divisor = √d_o` when `temperature_scaled`, else 1.
pub fn exact_attention_query(
    x_ctx: &DenseMatrix,
    x_q: &[f64],
    w: &AttentionWeights,
    temperature_scaled: bool,
) -> Result<Vec<f64>> {
    check_query_dims(x_ctx, x_q, w, "exact_attention_query")?;
    let keys = w.w_k.matmul(x_ctx)?;
    let q = w.w_q.matvec(x_q)?;
    let scores = keys.transpose().matmul(&DenseMatrix::column_vector(&q)?)?;
    let scaled = if temperature_scaled {
        scores.scale(1.0 / (w.d_o() as f64).sqrt())?
    } else {
        scores
    };
    let weights = column_softmax(&scaled)?;
    let values = w.w_v.matmul(x_ctx)?;
    Ok(values.matmul(&weights)?.col(0).to_vec())
}

/// Kernelized attention output for one query:
/// `h = (1/D)·Σ_j (W_V x_j)·k(W_K x_j, W_Q x_q)`,
/// `D = Σ_j k(W_K x_j, W_Q x_q)`.
///
/// With [`KernelEval::Exact`] this equals [`exact_attention_query`] with
/// the temperature off (same algebra, different summation order). With a
/// strictly positive feature map, `D > 0` always holds.
pub fn kernel_attention_query(
    x_ctx: &DenseMatrix,
    x_q: &[f64],
    w: &AttentionWeights,
    eval: &KernelEval,
) -> Result<Vec<f64>> {
    check_query_dims(x_ctx, x_q, w, "kernel_attention_query")?;
    let keys = w.w_k.matmul(x_ctx)?;
    let q = w.w_q.matvec(x_q)?;
    let weights: Vec<f64> = match eval {
        KernelEval::Exact => {
            let mut u = Vec::with_capacity(keys.cols());
            for j in 0..keys.cols() {
                u.push(softmax_kernel_exact(keys.col(j), &q)?);
            }
            u
        }
        KernelEval::Features(spec) => {
            let phi_k = apply_feature_map_columns(spec, &keys)?;
            let phi_q = apply_feature_map(spec, &q)?;
            phi_k.transpose().matvec(&phi_q)?
        }
    };
    let d: f64 = weights.iter().sum();
    assert!(d > 0.0, "normalizer must be positive for a positive kernel");
    let values = w.w_v.matmul(x_ctx)?;
    let unnormalized = values.matmul(&DenseMatrix::column_vector(&weights)?)?;
    Ok(unnormalized.col(0).iter().map(|v| v / d).collect())
}

/// Output of [`ffn_forward`]: the value and the ReLU activation pattern.
#[derive(Debug, Clone)]
pub struct FfnOutput {
    pub output: Vec<f64>,
    /// `mask[i]` is true where `(W_1 h + b_1)_i ≥ 0` (the diagonal of I_M).
    pub mask: Vec<bool>,
}

/// Feed-forward layer `W_2·relu(W_1 h + b_1) + b_2`, returning the ReLU
/// mask alongside the output. By construction the output also equals the
/// masked linear form `W_F h + b_F` with `W_F = W_2 I_M W_1` and
/// `b_F = W_2 I_M b_1 + b_2` (see [`wf_rank_report`]).
pub fn ffn_forward(h: &[f64], f: &FfnWeights) -> Result<FfnOutput> {
    if h.len() != f.w1.cols() {
        return Err(CoreError::ShapeMismatch {
            op: "ffn_forward",
            expected: format!("input dim {}", f.w1.cols()),
            got: format!("{}", h.len()),
        });
    }
    let pre: Vec<f64> = f
        .w1
        .matvec(h)?
        .iter()
        .zip(&f.b1)
        .map(|(v, b)| v + b)
        .collect();
    let mask: Vec<bool> = pre.iter().map(|&v| v >= 0.0).collect();
    let hidden: Vec<f64> = pre.iter().map(|&v| if v >= 0.0 { v } else { 0.0 }).collect();
    let output: Vec<f64> = f
        .w2
        .matvec(&hidden)?
        .iter()
        .zip(&f.b2)
        .map(|(v, b)| v + b)
        .collect();
    if !output.iter().all(|v| v.is_finite()) {
        return Err(CoreError::NonFinite { op: "ffn_forward" });
    }
    Ok(FfnOutput { output, mask })
}

/// The masked linear form of an FFN for a fixed activation pattern.
#[derive(Debug, Clone)]
pub struct WfRankReport {
    /// `W_F = W_2 I_M W_1`.
    pub w_f: DenseMatrix,
    /// `b_F = W_2 I_M b_1 + b_2`.
    pub b_f: Vec<f64>,
    /// `min(d, d_h, rank(I_M))` where `rank(I_M)` counts the ones.
    pub upper_bound: usize,
}

/// Builds `W_F`, `b_F` and the rank upper bound from an activation mask.
pub fn wf_rank_report(f: &FfnWeights, mask: &[bool]) -> Result<WfRankReport> {
    let d_h = f.hidden_dim();
    if mask.len() != d_h {
        return Err(CoreError::ShapeMismatch {
            op: "wf_rank_report",
            expected: format!("mask of length {d_h}"),
            got: format!("{}", mask.len()),
        });
    }
    // W_2 I_M: zero the masked-out columns of W_2.
    let w2_masked = DenseMatrix::from_fn(f.w2.rows(), d_h, |i, j| if mask[j] { f.w2.get(i, j) } else { 0.0 })?;
    let w_f = w2_masked.matmul(&f.w1)?;
    let masked_b1: Vec<f64> = f.b1.iter().zip(mask).map(|(&b, &m)| if m { b } else { 0.0 }).collect();
    let b_f: Vec<f64> = w2_masked
        .matvec(&masked_b1)?
        .iter()
        .zip(&f.b2)
        .map(|(v, b)| v + b)
        .collect();
    let ones = mask.iter().filter(|&&m| m).count();
    let d = f.output_dim().min(f.w1.cols());
    Ok(WfRankReport {
        w_f,
        b_f,
        upper_bound: d.min(d_h).min(ones),
    })
}

/// Per-layer activations of a stacked prefix-attention forward pass.
#[derive(Debug, Clone)]
pub struct StackTrace {
    /// `per_layer[l]` is the d×(N+1) activation matrix after layer l
    /// (demonstration columns first, query column last).
    pub per_layer: Vec<DenseMatrix>,
    /// Query column of the last layer.
    pub final_query: Vec<f64>,
}

/// Runs a stack of kernelized attention layers under the prefix scheme:
/// demonstration tokens attend among the demonstrations only, while the
/// query token attends to all N+1 tokens including itself. `x` holds the N
/// demonstration columns followed by the query column.
pub fn prefixlm_stack_forward(
    x: &DenseMatrix,
    layers: &[AttentionWeights],
    spec: &FeatureMapSpec,
) -> Result<StackTrace> {
    if layers.is_empty() {
        return Err(CoreError::InvalidParameter {
            name: "layers",
            reason: "need at least one layer".into(),
        });
    }
    if x.cols() < 2 {
        return Err(CoreError::InvalidParameter {
            name: "x",
            reason: "need at least one demonstration plus the query".into(),
        });
    }
    let n = x.cols() - 1;
    let eval = KernelEval::Features(spec);
    let mut current = x.clone();
    let mut per_layer = Vec::with_capacity(layers.len());
    for w in layers {
        let demos = current.slice_cols(0, n)?;
        let mut next_cols: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        for i in 0..n {
            next_cols.push(kernel_attention_query(&demos, demos.col(i), w, &eval)?);
        }
        next_cols.push(kernel_attention_query(&current, current.col(n), w, &eval)?);
        let views: Vec<&[f64]> = next_cols.iter().map(|c| c.as_slice()).collect();
        current = DenseMatrix::from_columns(&views)?;
        per_layer.push(current.clone());
    }
    let final_query = current.col(n).to_vec();
    Ok(StackTrace { per_layer, final_query })
}

fn assemble_context(
    x_d: &DenseMatrix,
    x_t: Option<&DenseMatrix>,
    x_q: &[f64],
    include_query_self: bool,
) -> Result<DenseMatrix> {
    let q_col;
    let mut parts: Vec<&DenseMatrix> = vec![x_d];
    if let Some(t) = x_t {
        parts.push(t);
    }
    if include_query_self {
        q_col = DenseMatrix::column_vector(x_q)?;
        parts.push(&q_col);
        DenseMatrix::concat_cols(&parts)
    } else {
        DenseMatrix::concat_cols(&parts)
    }
}

/// Regularized attention (query form): the softmax weights are computed on
/// the unmodified context, but the value matrix down-weights the
/// non-demonstration block:
/// `h = W_V [X_D, (1−α)X_T'] · softmax((W_K X)ᵀ W_Q x_q / √d_o)`,
/// where `X_T'` is the prior-query block plus — when `include_query_self`
/// is set — the query's own column.
pub fn regularized_attention(
    x_d: &DenseMatrix,
    x_t: Option<&DenseMatrix>,
    x_q: &[f64],
    w: &AttentionWeights,
    alpha: f64,
    include_query_self: bool,
) -> Result<Vec<f64>> {
    if !alpha.is_finite() {
        return Err(CoreError::NonFinite {
            op: "regularized_attention",
        });
    }
    let x_full = assemble_context(x_d, x_t, x_q, include_query_self)?;
    let n_d = x_d.cols();
    let n_total = x_full.cols();
    let mut x_mod = x_full.clone();
    if n_total > n_d {
        let tail = x_full.slice_cols(n_d, n_total - n_d)?.scale(1.0 - alpha)?;
        x_mod = DenseMatrix::concat_cols(&[&x_full.slice_cols(0, n_d)?, &tail])?;
    }
    let keys = w.w_k.matmul(&x_full)?;
    let q = w.w_q.matvec(x_q)?;
    let scores = keys
        .transpose()
        .matmul(&DenseMatrix::column_vector(&q)?)?
        .scale(1.0 / (w.d_o() as f64).sqrt())?;
    let weights = column_softmax(&scores)?;
    let values = w.w_v.matmul(&x_mod)?;
    Ok(values.matmul(&weights)?.col(0).to_vec())
}

/// The weight matrix of regularized self-attention: every column of
/// `softmax((W_K X)ᵀ(W_Q X)/√d_o) − αI` renormalized to sum to one.
///
/// A column whose entries cancel to (numerically) zero after the
/// subtraction — e.g. α = 1 with a fully self-concentrated column — cannot
/// be renormalized and is reported as a degenerate-normalization error.
pub fn regularized_self_weights(x: &DenseMatrix, w: &AttentionWeights, alpha: f64) -> Result<DenseMatrix> {
    if !alpha.is_finite() {
        return Err(CoreError::NonFinite {
            op: "regularized_self_attention",
        });
    }
    let keys = w.w_k.matmul(x)?;
    let queries = w.w_q.matmul(x)?;
    let scores = keys
        .transpose()
        .matmul(&queries)?
        .scale(1.0 / (w.d_o() as f64).sqrt())?;
    let a = column_softmax(&scores)?;
    let n = a.cols();
    let mut data = Vec::with_capacity(n * n);
    for j in 0..n {
        let col = a.col(j);
        // Column sum after subtracting α at the diagonal is 1 − α for every
        // column (softmax columns sum to one), but compute it from the
        // actual entries so rounding is accounted for.
        let mut shifted: Vec<f64> = col.to_vec();
        shifted[j] -= alpha;
        let sum: f64 = shifted.iter().sum();
        if sum.abs() < 1e-12 {
            return Err(CoreError::DegenerateNormalization {
                op: "regularized_self_attention",
                divisor: sum,
            });
        }
        data.extend(shifted.iter().map(|v| v / sum));
    }
    DenseMatrix::from_vec(n, n, data)
}

/// Regularized self-attention output:
/// `H = W_V X · Norm(softmax((W_K X)ᵀ(W_Q X)/√d_o) − αI)`
/// (see [`regularized_self_weights`]).
pub fn regularized_self_attention(x: &DenseMatrix, w: &AttentionWeights, alpha: f64) -> Result<DenseMatrix> {
    let weights = regularized_self_weights(x, w, alpha)?;
    let values = w.w_v.matmul(x)?;
    values.matmul(&weights)
}

/// Augmented attention: column-wise nonlinear maps on projected values and
/// keys, softmax on the augmented scores:
/// `h = g_1(W_V X) · softmax(g_2(W_K X)ᵀ W_Q x_q / √d_o)`.
pub fn augmented_attention(
    x_ctx: &DenseMatrix,
    x_q: &[f64],
    w: &AttentionWeights,
    g1: &Augmentation,
    g2: &Augmentation,
) -> Result<Vec<f64>> {
    check_query_dims(x_ctx, x_q, w, "augmented_attention")?;
    let keys = g2.apply_columns(&w.w_k.matmul(x_ctx)?)?;
    let values = g1.apply_columns(&w.w_v.matmul(x_ctx)?)?;
    let q = w.w_q.matvec(x_q)?;
    let scores = keys
        .transpose()
        .matmul(&DenseMatrix::column_vector(&q)?)?
        .scale(1.0 / (w.d_o() as f64).sqrt())?;
    let weights = column_softmax(&scores)?;
    Ok(values.matmul(&weights)?.col(0).to_vec())
}

/// For each demonstration token, the indices of its `k` negative samples:
/// the other demonstrations with the lowest attention scores against the
/// token's own query projection (`(W_K x_j)ᵀ(W_Q x_i)/√d_o`), ties broken
/// towards the lowest index.
pub fn negative_sample_selection(x_d: &DenseMatrix, w: &AttentionWeights, k: usize) -> Result<Vec<Vec<usize>>> {
    let n = x_d.cols();
    if k == 0 || k > n - 1 {
        return Err(CoreError::InvalidParameter {
            name: "k",
            reason: format!("need 1 ≤ k ≤ N−1 = {}, got {k}", n - 1),
        });
    }
    let keys = w.w_k.matmul(x_d)?;
    let queries = w.w_q.matmul(x_d)?;
    let scores = keys
        .transpose()
        .matmul(&queries)?
        .scale(1.0 / (w.d_o() as f64).sqrt())?;
    let mut selection = Vec::with_capacity(n);
    for i in 0..n {
        let col = scores.col(i); // scores of all demo keys against query i
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| {
            col[a]
                .partial_cmp(&col[b])
                .expect("finite scores")
                .then(a.cmp(&b))
        });
        order.truncate(k);
        selection.push(order);
    }
    Ok(selection)
}

/// Negative-sample attention: each demonstration is shifted away from its
/// least-attended peers, `x̃_i = x_i − (β/|𝒩(i)|)·Σ_{j∈𝒩(i)} x_j`, the
/// value side uses the shifted demonstrations, and the softmax weights are
/// computed on the *unmodified* context.
pub fn negative_attention(
    x_d: &DenseMatrix,
    x_t: Option<&DenseMatrix>,
    x_q: &[f64],
    w: &AttentionWeights,
    beta: f64,
    k: usize,
    include_query_self: bool,
) -> Result<Vec<f64>> {
    if !beta.is_finite() {
        return Err(CoreError::NonFinite {
            op: "negative_attention",
        });
    }
    let x_full = assemble_context(x_d, x_t, x_q, include_query_self)?;
    let n = x_d.cols();
    let x_d_mod = if beta == 0.0 {
        x_d.clone()
    } else {
        let selection = negative_sample_selection(x_d, w, k)?;
        let mut mixed = x_d.clone();
        for (i, neighbors) in selection.iter().enumerate() {
            let scale = beta / neighbors.len() as f64;
            for r in 0..x_d.rows() {
                let mut acc = 0.0;
                for &j in neighbors {
                    acc += x_d.get(r, j);
                }
                mixed.set(r, i, x_d.get(r, i) - scale * acc)?;
            }
        }
        mixed
    };
    let mut x_mod_parts: Vec<&DenseMatrix> = vec![&x_d_mod];
    let tail;
    if x_full.cols() > n {
        tail = x_full.slice_cols(n, x_full.cols() - n)?;
        x_mod_parts.push(&tail);
    }
    let x_mod = DenseMatrix::concat_cols(&x_mod_parts)?;

    let keys = w.w_k.matmul(&x_full)?;
    let q = w.w_q.matvec(x_q)?;
    let scores = keys
        .transpose()
        .matmul(&DenseMatrix::column_vector(&q)?)?
        .scale(1.0 / (w.d_o() as f64).sqrt())?;
    let weights = column_softmax(&scores)?;
    let values = w.w_v.matmul(&x_mod)?;
    Ok(values.matmul(&weights)?.col(0).to_vec())
}

/// Ridge-regression attention: for each query column `q_j`,
/// `H_j = (W_V X) φ(W_K X)ᵀ · [φ(W_K X) φ(W_K X)ᵀ + α·D_j·I]⁻¹ · φ(W_Q x_j)`
/// where `D_j = Σ_i ⟨φ(W_K x_i), φ(W_Q x_j)⟩` is the column's normalizer.
/// The system is solved by factorization (Cholesky for `α > 0`, pivoted LU
/// otherwise), never by forming the inverse.
pub fn ridge_attention(
    x: &DenseMatrix,
    w: &AttentionWeights,
    spec: &FeatureMapSpec,
    alpha: f64,
) -> Result<DenseMatrix> {
    if !alpha.is_finite() {
        return Err(CoreError::NonFinite { op: "ridge_attention" });
    }
    let phi_k = apply_feature_map_columns(spec, &w.w_k.matmul(x)?)?;
    let phi_q = apply_feature_map_columns(spec, &w.w_q.matmul(x)?)?;
    let d_r = phi_k.rows();
    let gram = phi_k.matmul(&phi_k.transpose())?; // d_r × d_r
    let v_phi_t = w.w_v.matmul(x)?.matmul(&phi_k.transpose())?; // d_o × d_r
    let n = x.cols();
    let mut out_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    for j in 0..n {
        let q_feat = phi_q.col(j);
        let d_j: f64 = phi_k
            .transpose()
            .matvec(q_feat)?
            .iter()
            .sum();
        let m = gram.add(&DenseMatrix::identity(d_r).scale(alpha * d_j)?)?;
        let xi = if alpha > 0.0 {
            cholesky_solve(&m, q_feat)?
        } else {
            lu_solve(&m, q_feat)?
        };
        out_cols.push(v_phi_t.matvec(&xi)?);
    }
    let views: Vec<&[f64]> = out_cols.iter().map(|c| c.as_slice()).collect();
    DenseMatrix::from_columns(&views)
}
