//! The gradient-descent dual of kernelized attention.
//!
//! For a context `[X_D, X_T, x_q]` and projections `W_Q, W_K, W_V`, the
//! kernelized attention output can be written as the test prediction of a
//! linear model `f(z) = W φ(z)` trained by one gradient-descent step:
//!
//! * training pairs: `z_i = W_K x_i`, `y_i = W_V x_i` over the
//!   demonstrations;
//! * initialization: `W₀ = (1/D) Σ_{j ∉ demos} (W_V x_j) φ(W_K x_j)ᵀ`,
//!   built from the non-demonstration context block (prior queries plus,
//!   optionally, the query token itself);
//! * loss: `L(W) = −(1/(η·D)) Σ_i y_iᵀ W φ(z_i)` with
//!   `D = Σ_{all context} ⟨φ(W_K x), φ(W_Q x_q)⟩`;
//! * one step of gradient descent with learning rate η then yields
//!   `Ŵ = W₀ + (1/D) Σ_i y_i φ(z_i)ᵀ`, and `Ŵ φ(W_Q x_q)` equals the
//!   attention output exactly.
//!
//! Because the loss is linear in `W`, the gradient does not depend on `W`:
//! full-batch and per-example schedules coincide, the example order is
//! irrelevant, and η cancels out of the trained weight. The same
//! construction extends to a full transformer layer (attention + ReLU FFN,
//! which adds a fixed bias and re-labels the training pairs) and to stacks
//! of prefix-attention layers (a chain of dual models, one per layer,
//! each built from the previous layer's reconstructed outputs).

use crate::attention::{
    ffn_forward, kernel_attention_query, wf_rank_report, AttentionWeights, ContextLayout, FfnWeights,
    KernelEval, WfRankReport,
};
use crate::error::{CoreError, Result};
use crate::kernel::{apply_feature_map, FeatureMapSpec};
use crate::numerics::matrix::{dot, norm, outer_product, DenseMatrix};

/// Linear dual model `f(z) = W φ(z) (+ bias)`.
///
/// `w_init` keeps the initialization so that trained and initial
/// predictions can be compared after updates (the layer-stack
/// reconstruction needs their difference). The bias, when present, is
/// never modified by training.
#[derive(Debug, Clone)]
pub struct DualModel {
    /// Current weight, `d_out × d_r`.
    pub w: DenseMatrix,
    /// The weight the model was built with.
    pub w_init: DenseMatrix,
    /// Fixed bias (present for the transformer-layer dual).
    pub bias: Option<Vec<f64>>,
    /// Feature map φ shared with the attention side.
    pub spec: FeatureMapSpec,
}

/// Per-context training set of a dual model.
///
/// Inputs and test input are stored *before* the feature map: `z_i = W_K
/// x_i` and `z_test = W_Q x_q`; φ is applied by the loss, update, and
/// prediction routines through the model's spec.
#[derive(Debug, Clone)]
pub struct DualDataset {
    /// `z_i = W_K x_i`, one per demonstration.
    pub inputs: Vec<Vec<f64>>,
    /// `y_i = W_V x_i` (attention dual) or `W_F W_V x_i` (transformer-layer dual).
    pub labels: Vec<Vec<f64>>,
    /// Kernel-sum normalizer over the full attended context.
    pub d: f64,
    /// `z_test = W_Q x_q`.
    pub z_test: Vec<f64>,
    /// Learning rate (cancels out of the trained weight).
    pub eta: f64,
}

impl DualDataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Gradient-descent schedule for [`dual_update`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateMode {
    /// One step on the summed loss.
    FullBatch,
    /// One step per demonstration, in order.
    Incremental,
    /// One step per demonstration, reversed order (order invariance check).
    IncrementalReversed,
}

/// Trace of a [`dual_update`] run: the test prediction after every step
/// (entry 0 is the prediction at initialization).
#[derive(Debug, Clone)]
pub struct UpdateTrace {
    pub predictions: Vec<Vec<f64>>,
}

/// Distances between the dual prediction and the attention output along an
/// update trace.
#[derive(Debug, Clone)]
pub struct EquivalenceReport {
    /// `‖ŷ_test − h'‖₂` after each step; entry 0 is the initialization.
    pub distances: Vec<f64>,
    /// Last entry of `distances`.
    pub final_distance: f64,
    /// Number of gradient steps taken (N per-example steps, or 1).
    pub step_count: usize,
    /// `‖h'‖₂`, the scale for relative errors.
    pub reference_norm: f64,
    /// The attention output `h'`.
    pub attention_output: Vec<f64>,
    /// The trained dual's test prediction.
    pub dual_prediction: Vec<f64>,
}

impl EquivalenceReport {
    /// Final distance divided by `max(‖h'‖, tiny)`.
    pub fn final_relative_error(&self) -> f64 {
        self.final_distance / self.reference_norm.max(f64::MIN_POSITIVE)
    }
}

fn validate_layout(x_d: &DenseMatrix, x_t: Option<&DenseMatrix>, layout: &ContextLayout) -> Result<()> {
    if x_d.cols() != layout.n_demos {
        return Err(CoreError::ShapeMismatch {
            op: "build_dual",
            expected: format!("{} demonstration columns", layout.n_demos),
            got: format!("{}", x_d.cols()),
        });
    }
    let t = x_t.map_or(0, |m| m.cols());
    if t != layout.n_prior_queries {
        return Err(CoreError::ShapeMismatch {
            op: "build_dual",
            expected: format!("{} prior-query columns", layout.n_prior_queries),
            got: format!("{t}"),
        });
    }
    Ok(())
}

/// Builds the dual model (initialized at `W₀`) and its training set for a
/// plain attention layer.
pub fn build_dual_for_attention(
    x_d: &DenseMatrix,
    x_t: Option<&DenseMatrix>,
    x_q: &[f64],
    w: &AttentionWeights,
    spec: &FeatureMapSpec,
    layout: &ContextLayout,
    eta: f64,
) -> Result<(DualModel, DualDataset)> {
    validate_layout(x_d, x_t, layout)?;
    if eta <= 0.0 || !eta.is_finite() {
        return Err(CoreError::InvalidParameter {
            name: "eta",
            reason: format!("learning rate must be positive and finite, got {eta}"),
        });
    }
    let n = x_d.cols();
    if n == 0 {
        return Err(CoreError::EmptyContext);
    }

    let phi_test = apply_feature_map(spec, &w.w_q.matvec(x_q)?)?;
    let d_r = spec.feature_dim();
    let d_out = w.d_o();

    // Demonstration pairs and their normalizer contribution.
    let mut inputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut d_total = 0.0_f64;
    for i in 0..n {
        let z = w.w_k.matvec(x_d.col(i))?;
        d_total += dot(&apply_feature_map(spec, &z)?, &phi_test)?;
        labels.push(w.w_v.matvec(x_d.col(i))?);
        inputs.push(z);
    }

    // Non-demonstration block: prior queries plus (optionally) the query.
    let mut init_cols: Vec<Vec<f64>> = Vec::new();
    if let Some(t) = x_t {
        for j in 0..t.cols() {
            init_cols.push(t.col(j).to_vec());
        }
    }
    if layout.include_query_self {
        init_cols.push(x_q.to_vec());
    }
    let mut w0 = DenseMatrix::zeros(d_out, d_r);
    let mut init_outer = DenseMatrix::zeros(d_out, d_r);
    for x in &init_cols {
        let z = w.w_k.matvec(x)?;
        let phi = apply_feature_map(spec, &z)?;
        d_total += dot(&phi, &phi_test)?;
        init_outer = init_outer.add(&outer_product(&w.w_v.matvec(x)?, &phi)?)?;
    }
    assert!(
        d_total > 0.0,
        "kernel normalizer must be positive for strictly positive feature maps"
    );
    if !init_cols.is_empty() {
        w0 = init_outer.scale(1.0 / d_total)?;
    }

    let model = DualModel {
        w: w0.clone(),
        w_init: w0,
        bias: None,
        spec: spec.clone(),
    };
    let dataset = DualDataset {
        inputs,
        labels,
        d: d_total,
        z_test: w.w_q.matvec(x_q)?,
        eta,
    };
    Ok((model, dataset))
}

/// The loss whose single gradient step reproduces attention:
/// `L(W) = −(1/(η·D)) Σ_i y_iᵀ W φ(z_i)` — linear in `W` (a negated,
/// scaled sum of label/feature cosine-alignment terms).
pub fn dual_loss(model: &DualModel, ds: &DualDataset) -> Result<f64> {
    let mut total = 0.0;
    for (z, y) in ds.inputs.iter().zip(&ds.labels) {
        let pred = model.w.matvec(&apply_feature_map(&model.spec, z)?)?;
        total += dot(y, &pred)?;
    }
    Ok(-total / (ds.eta * ds.d))
}

/// Analytic gradient of [`dual_loss`] with respect to `W`:
/// `−(1/(η·D)) Σ_i y_i φ(z_i)ᵀ` (independent of `W`).
pub fn dual_loss_gradient(model: &DualModel, ds: &DualDataset) -> Result<DenseMatrix> {
    let mut acc = DenseMatrix::zeros(model.w.rows(), model.w.cols());
    for (z, y) in ds.inputs.iter().zip(&ds.labels) {
        acc = acc.add(&outer_product(y, &apply_feature_map(&model.spec, z)?)?)?;
    }
    acc.scale(-1.0 / (ds.eta * ds.d))
}

fn sample_step(model: &mut DualModel, ds: &DualDataset, i: usize) -> Result<()> {
    let phi = apply_feature_map(&model.spec, &ds.inputs[i])?;
    // W ← W − η·(−(1/(ηD)) y φᵀ); written exactly as the schedule
    // prescribes so that the η cancellation is exercised, not assumed.
    let grad = outer_product(&ds.labels[i], &phi)?.scale(-1.0 / (ds.eta * ds.d))?;
    model.w = model.w.sub(&grad.scale(ds.eta)?)?;
    Ok(())
}

/// Runs the chosen gradient-descent schedule, returning the test
/// prediction after every step (the equivalence trace hook). All schedules
/// produce the same trained weight because the gradient is constant in `W`.
pub fn dual_update(model: &mut DualModel, ds: &DualDataset, mode: UpdateMode) -> Result<UpdateTrace> {
    if ds.is_empty() {
        return Err(CoreError::EmptyContext);
    }
    let mut predictions = vec![dual_predict(model, &ds.z_test)?];
    match mode {
        UpdateMode::FullBatch => {
            let grad = dual_loss_gradient(model, ds)?;
            model.w = model.w.sub(&grad.scale(ds.eta)?)?;
            predictions.push(dual_predict(model, &ds.z_test)?);
        }
        UpdateMode::Incremental => {
            for i in 0..ds.len() {
                sample_step(model, ds, i)?;
                predictions.push(dual_predict(model, &ds.z_test)?);
            }
        }
        UpdateMode::IncrementalReversed => {
            for i in (0..ds.len()).rev() {
                sample_step(model, ds, i)?;
                predictions.push(dual_predict(model, &ds.z_test)?);
            }
        }
    }
    Ok(UpdateTrace { predictions })
}

/// Test prediction `W φ(z) (+ bias)` with the current weight.
pub fn dual_predict(model: &DualModel, z: &[f64]) -> Result<Vec<f64>> {
    let mut out = model.w.matvec(&apply_feature_map(&model.spec, z)?)?;
    if let Some(b) = &model.bias {
        for (o, bi) in out.iter_mut().zip(b) {
            *o += bi;
        }
    }
    Ok(out)
}

/// Prediction with the initialization weight `W_init` (+ bias).
pub fn dual_predict_init(model: &DualModel, z: &[f64]) -> Result<Vec<f64>> {
    let mut out = model.w_init.matvec(&apply_feature_map(&model.spec, z)?)?;
    if let Some(b) = &model.bias {
        for (o, bi) in out.iter_mut().zip(b) {
            *o += bi;
        }
    }
    Ok(out)
}

fn assemble_full_context(
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

fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Builds a dual model, trains it step by step, and records the distance
/// to the kernelized attention output after every step. `steps` must be 1
/// (full batch) or N (per-example trace).
pub fn verify_equivalence(
    x_d: &DenseMatrix,
    x_t: Option<&DenseMatrix>,
    x_q: &[f64],
    w: &AttentionWeights,
    spec: &FeatureMapSpec,
    layout: &ContextLayout,
    steps: usize,
) -> Result<EquivalenceReport> {
    let n = x_d.cols();
    let mode = if steps == 1 {
        UpdateMode::FullBatch
    } else if steps == n {
        UpdateMode::Incremental
    } else {
        return Err(CoreError::InvalidParameter {
            name: "steps",
            reason: format!("must be 1 (full batch) or N = {n} (per-example), got {steps}"),
        });
    };
    let x_full = assemble_full_context(x_d, x_t, x_q, layout.include_query_self)?;
    let attention_output = kernel_attention_query(&x_full, x_q, w, &KernelEval::Features(spec))?;

    let (mut model, ds) = build_dual_for_attention(x_d, x_t, x_q, w, spec, layout, 1.0)?;
    let trace = dual_update(&mut model, &ds, mode)?;
    let distances: Vec<f64> = trace
        .predictions
        .iter()
        .map(|p| l2_distance(p, &attention_output))
        .collect();
    let final_distance = *distances.last().expect("trace has at least the init entry");
    let dual_prediction = trace.predictions.last().expect("non-empty trace").clone();
    Ok(EquivalenceReport {
        distances,
        final_distance,
        step_count: steps,
        reference_norm: norm(&attention_output),
        attention_output,
        dual_prediction,
    })
}

/// Dual construction for a full transformer layer (attention followed by a
/// ReLU feed-forward block).
#[derive(Debug, Clone)]
pub struct TransformerLayerDual {
    /// Dual model initialized at `W_F·W₀` with fixed bias `b_F`.
    pub model: DualModel,
    /// Training pairs with labels `W_F W_V x_i`.
    pub dataset: DualDataset,
    /// The attention output `h'` the ReLU mask was frozen on.
    pub attention_output: Vec<f64>,
    /// `ffn_forward(h')` — the value the trained dual must reproduce.
    pub ffn_output: Vec<f64>,
    /// The masked linear form `(W_F, b_F)` and its rank bound.
    pub rank_report: WfRankReport,
}

/// Builds the dual of attention + FFN. The ReLU activation pattern is
/// extracted from the actual forward pass on the query's attention output
/// and frozen; with it the FFN is the linear map `h ↦ W_F h + b_F`, so the
/// layer's dual is the attention dual with labels and initialization
/// pushed through `W_F` and a fixed bias `b_F`.
pub fn build_dual_for_transformer_layer(
    x_d: &DenseMatrix,
    x_t: Option<&DenseMatrix>,
    x_q: &[f64],
    w: &AttentionWeights,
    f: &FfnWeights,
    spec: &FeatureMapSpec,
    layout: &ContextLayout,
    eta: f64,
) -> Result<TransformerLayerDual> {
    let x_full = assemble_full_context(x_d, x_t, x_q, layout.include_query_self)?;
    let attention_output = kernel_attention_query(&x_full, x_q, w, &KernelEval::Features(spec))?;
    let ffn = ffn_forward(&attention_output, f)?;
    let rank_report = wf_rank_report(f, &ffn.mask)?;

    let (attn_model, attn_ds) = build_dual_for_attention(x_d, x_t, x_q, w, spec, layout, eta)?;
    let w_init = rank_report.w_f.matmul(&attn_model.w_init)?;
    let labels = attn_ds
        .labels
        .iter()
        .map(|y| rank_report.w_f.matvec(y))
        .collect::<Result<Vec<_>>>()?;
    let model = DualModel {
        w: w_init.clone(),
        w_init,
        bias: Some(rank_report.b_f.clone()),
        spec: spec.clone(),
    };
    let dataset = DualDataset {
        inputs: attn_ds.inputs,
        labels,
        d: attn_ds.d,
        z_test: attn_ds.z_test,
        eta,
    };
    Ok(TransformerLayerDual {
        model,
        dataset,
        attention_output,
        ffn_output: ffn.output,
        rank_report,
    })
}

/// Result of chaining dual models through a stack of prefix-attention
/// layers.
#[derive(Debug, Clone)]
pub struct MultiLayerDualRun {
    /// Trained dual model of each layer.
    pub models: Vec<DualModel>,
    /// Reconstructed demonstration outputs `H_D^(l)` (d×N per layer).
    pub reconstructed_demos: Vec<DenseMatrix>,
    /// Query prediction of each layer's dual.
    pub per_layer_query: Vec<Vec<f64>>,
    /// Last layer's query prediction.
    pub final_prediction: Vec<f64>,
}

/// Runs the layer-stack dual chain: layer `l`'s training set and test
/// input are built from layer `l−1`'s *reconstructed* outputs (not from
/// the attention forward pass), the query output is the trained dual's
/// test prediction, and the demonstration outputs are recovered from the
/// trained-vs-initial prediction gap rescaled by the normalizer ratio:
/// `h_i = (D/D_i)·[f̂(W_Q h_i^prev) − f_init(W_Q h_i^prev)]`, where `D_i`
/// sums kernel evaluations over the N demonstrations only.
///
/// `x` holds the N demonstration columns followed by the query column;
/// the query attends to all N+1 tokens (itself included).
pub fn multi_layer_dual_run(
    x: &DenseMatrix,
    layers: &[AttentionWeights],
    spec: &FeatureMapSpec,
    eta: f64,
) -> Result<MultiLayerDualRun> {
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
    let layout = ContextLayout::demos_with_self(n);
    let mut demos = x.slice_cols(0, n)?;
    let mut query = x.col(n).to_vec();

    let mut models = Vec::with_capacity(layers.len());
    let mut reconstructed = Vec::with_capacity(layers.len());
    let mut per_layer_query = Vec::with_capacity(layers.len());

    for w in layers {
        let (mut model, ds) = build_dual_for_attention(&demos, None, &query, w, spec, &layout, eta)?;
        dual_update(&mut model, &ds, UpdateMode::FullBatch)?;
        let query_out = dual_predict(&model, &ds.z_test)?;

        // Per-demo normalizers over the demonstration block only.
        let phi_demo: Vec<Vec<f64>> = ds
            .inputs
            .iter()
            .map(|z| apply_feature_map(spec, z))
            .collect::<Result<Vec<_>>>()?;
        let mut next_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let t_i = w.w_q.matvec(demos.col(i))?;
            let phi_t = apply_feature_map(spec, &t_i)?;
            let mut d_i = 0.0;
            for p in &phi_demo {
                d_i += dot(p, &phi_t)?;
            }
            assert!(d_i > 0.0, "demo normalizer must be positive");
            let trained = dual_predict(&model, &t_i)?;
            let initial = dual_predict_init(&model, &t_i)?;
            let scale = ds.d / d_i;
            next_cols.push(
                trained
                    .iter()
                    .zip(&initial)
                    .map(|(a, b)| scale * (a - b))
                    .collect(),
            );
        }
        let views: Vec<&[f64]> = next_cols.iter().map(|c| c.as_slice()).collect();
        demos = DenseMatrix::from_columns(&views)?;
        query = query_out.clone();
        models.push(model);
        reconstructed.push(demos.clone());
        per_layer_query.push(query_out);
    }
    let final_prediction = query.clone();
    Ok(MultiLayerDualRun {
        models,
        reconstructed_demos: reconstructed,
        per_layer_query,
        final_prediction,
    })
}
