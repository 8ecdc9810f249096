//! Synthetic tasks, token packing, and deterministic experiment drivers.
//!
//! Tasks map inputs `t` to labels `s` (`s = Wt`, `s = cos(Wt)`, or
//! `s = exp(Wt)` with a fixed random task matrix `W`); tokens are the
//! stacked pairs `x = [t; s]`, and a batch packs N demonstration tokens
//! plus one query token whose label slot is zeroed. On top of the
//! samplers sit the training loop ([`train_attention_model`],
//! [`variant_sweep`], [`gradient_check_variant`] — see the `training`
//! submodule) and the experiment drivers ([`rank_bound_experiment`],
//! [`equivalence_experiment`], [`approximation_sweep`]).

mod experiments;
mod training;

pub use experiments::{
    approximation_sweep, equivalence_experiment, median, rank_bound_experiment, ApproxRow,
    RankBoundRow,
};
pub use training::{
    gradient_check_variant, train_attention_model, variant_sweep, GradientCheckReport, TrainRun,
};

use crate::attention::ModificationConfig;
use crate::error::{CoreError, Result};
use crate::kernel::FeatureMapKind;
use crate::numerics::matrix::DenseMatrix;
use crate::numerics::rng::SeededRng;

/// Task families for synthetic in-context regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    /// `s = W t`, inputs uniform on (−1, 1).
    Linear,
    /// `s = cos(W t)`, inputs uniform on (0, π).
    Trig,
    /// `s = exp(W t)`, inputs uniform on (−1, 1).
    Exp,
}

impl TaskKind {
    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::Linear => "linear",
            TaskKind::Trig => "trig",
            TaskKind::Exp => "exp",
        }
    }
}

/// A sampled task: kind, dimensions, and the fixed task matrix.
#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub d_t: usize,
    pub d_s: usize,
    /// `d_s × d_t`, i.i.d. standard normal, fixed for the task's lifetime.
    pub w_task: DenseMatrix,
}

impl TaskSpec {
    /// Draws a task matrix with standard-normal entries.
    pub fn sample(kind: TaskKind, d_t: usize, d_s: usize, rng: &mut SeededRng) -> Result<Self> {
        if d_t == 0 || d_s == 0 {
            return Err(CoreError::InvalidParameter {
                name: "d_t/d_s",
                reason: "task dimensions must be positive".into(),
            });
        }
        Ok(Self {
            kind,
            d_t,
            d_s,
            w_task: rng.normal_matrix(d_s, d_t, 1.0),
        })
    }

    /// The reference dimensions for each task family: linear (d_t = 11),
    /// trig (d_t = 7), exp (d_t = 6), all with scalar labels.
    pub fn standard(kind: TaskKind, rng: &mut SeededRng) -> Result<Self> {
        let d_t = match kind {
            TaskKind::Linear => 11,
            TaskKind::Trig => 7,
            TaskKind::Exp => 6,
        };
        Self::sample(kind, d_t, 1, rng)
    }

    /// Token dimension `d_t + d_s`.
    pub fn token_dim(&self) -> usize {
        self.d_t + self.d_s
    }

    /// Samples `n` task inputs column-wise from the family's input
    /// distribution.
    pub fn sample_inputs(&self, n: usize, rng: &mut SeededRng) -> DenseMatrix {
        match self.kind {
            TaskKind::Linear | TaskKind::Exp => rng.uniform_matrix(self.d_t, n, -1.0, 1.0),
            TaskKind::Trig => rng.uniform_matrix(self.d_t, n, 0.0, std::f64::consts::PI),
        }
    }

    /// Labels for a column matrix of inputs, elementwise per task kind.
    pub fn labels(&self, t: &DenseMatrix) -> Result<DenseMatrix> {
        let lin = self.w_task.matmul(t)?;
        match self.kind {
            TaskKind::Linear => Ok(lin),
            TaskKind::Trig => lin.map("trig_labels", f64::cos),
            TaskKind::Exp => lin.map("exp_labels", f64::exp),
        }
    }

    /// Samples `n` full tokens `[t; s]` (no masking; used where every token
    /// is a demonstration).
    pub fn sample_tokens(&self, n: usize, rng: &mut SeededRng) -> Result<DenseMatrix> {
        let t = self.sample_inputs(n, rng);
        let s = self.labels(&t)?;
        DenseMatrix::concat_rows(&t, &s)
    }
}

/// One training instance: N demonstration tokens plus a query token with
/// its label slot zeroed, and the withheld ground-truth label.
#[derive(Debug, Clone)]
pub struct TokenBatch {
    /// `d_i × n` token matrix; the last column is the query `[t; 0]`.
    pub x: DenseMatrix,
    /// The query's withheld label (length `d_s`).
    pub query_label: Vec<f64>,
    pub d_t: usize,
    pub d_s: usize,
}

impl TokenBatch {
    /// Number of tokens including the query.
    pub fn n_tokens(&self) -> usize {
        self.x.cols()
    }

    /// The demonstration block (all columns but the last).
    pub fn demos(&self) -> Result<DenseMatrix> {
        self.x.slice_cols(0, self.n_tokens() - 1)
    }

    /// The query column `[t; 0]`.
    pub fn query(&self) -> &[f64] {
        self.x.col(self.n_tokens() - 1)
    }

    /// Confirms the query's label slot is exactly zero.
    pub fn assert_query_masked(&self) {
        let q = self.query();
        assert!(
            q[self.d_t..].iter().all(|&v| v == 0.0),
            "query label slot must be zeroed"
        );
    }
}

/// Samples a batch of `n ≥ 2` tokens: `n − 1` demonstrations and one query
/// whose label slot is zeroed (the true label is kept separately).
pub fn sample_task_batch(task: &TaskSpec, n: usize, rng: &mut SeededRng) -> Result<TokenBatch> {
    if n < 2 {
        return Err(CoreError::InvalidParameter {
            name: "n",
            reason: format!("need at least one demonstration plus the query, got {n}"),
        });
    }
    let t = task.sample_inputs(n, rng);
    let s = task.labels(&t)?;
    let mut x = DenseMatrix::concat_rows(&t, &s)?;
    let query_label = (0..task.d_s).map(|i| s.get(i, n - 1)).collect();
    for i in 0..task.d_s {
        x.set(task.d_t + i, n - 1, 0.0)?;
    }
    let batch = TokenBatch {
        x,
        query_label,
        d_t: task.d_t,
        d_s: task.d_s,
    };
    batch.assert_query_masked();
    Ok(batch)
}

/// Configuration of one training run.
///
/// An epoch is one pass over a fixed set of `steps_per_epoch` batches
/// (total tokens per epoch = `steps_per_epoch × n_tokens_per_step`); the
/// same batches are revisited every epoch, so a zero learning rate yields
/// a perfectly flat loss curve.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Tokens per batch, N+1 ≥ 2.
    pub n_tokens_per_step: usize,
    /// Batches per epoch (N_step).
    pub steps_per_epoch: usize,
    pub epochs: usize,
    /// Plain-SGD learning rate (≥ 0; zero is allowed as a no-op probe).
    pub learning_rate: f64,
    /// Variant hyperparameters; neutral = unmodified attention.
    pub modification: ModificationConfig,
    pub feature_map: FeatureMapKind,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_tokens_per_step < 2 {
            return Err(CoreError::InvalidParameter {
                name: "n_tokens_per_step",
                reason: "need at least 2 tokens per step".into(),
            });
        }
        if self.steps_per_epoch == 0 || self.epochs == 0 {
            return Err(CoreError::InvalidParameter {
                name: "steps_per_epoch/epochs",
                reason: "need at least one step and one epoch".into(),
            });
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(CoreError::InvalidParameter {
                name: "learning_rate",
                reason: format!("must be finite and nonnegative, got {}", self.learning_rate),
            });
        }
        self.modification.validate(self.n_tokens_per_step - 1)?;
        Ok(())
    }

    /// Linear-task reference run (d_t = 11, N+1 = 16, lr = 0.003,
    /// d_r = 1200) at desk scale: 32 batches per epoch, 50 epochs.
    pub fn linear_reference(seed: u64) -> Self {
        Self {
            n_tokens_per_step: 16,
            steps_per_epoch: 32,
            epochs: 50,
            learning_rate: 0.003,
            modification: ModificationConfig::neutral(),
            feature_map: FeatureMapKind::PositiveRandomFeatures { d_r: 1200 },
            seed,
        }
    }

    /// Trig-task reference run (d_t = 7, N+1 = 128, lr = 0.005) at desk
    /// scale.
    pub fn trig_reference(seed: u64) -> Self {
        Self {
            n_tokens_per_step: 128,
            steps_per_epoch: 8,
            epochs: 5,
            learning_rate: 0.005,
            modification: ModificationConfig::neutral(),
            feature_map: FeatureMapKind::PositiveRandomFeatures { d_r: 800 },
            seed,
        }
    }

    /// Exp-task reference run (d_t = 6, N+1 = 512, lr = 0.005) at desk
    /// scale.
    pub fn exp_reference(seed: u64) -> Self {
        Self {
            n_tokens_per_step: 512,
            steps_per_epoch: 4,
            epochs: 3,
            learning_rate: 0.005,
            modification: ModificationConfig::neutral(),
            feature_map: FeatureMapKind::PositiveRandomFeatures { d_r: 700 },
            seed,
        }
    }
}

/// Stream blocks for deriving independent RNG streams from one seed (see
/// `numerics::rng::stream_id`).
pub(crate) mod streams {
    /// Training data batches.
    pub const DATA: u32 = 1;
    /// Attention weight initialization.
    pub const INIT: u32 = 2;
    /// Feature-map draw (PRF omega).
    pub const OMEGA: u32 = 3;
    /// Per-seed experiment streams.
    pub const EXPERIMENT: u32 = 4;
    /// Generalization-gap sampling.
    pub const GAP: u32 = 5;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> SeededRng {
        SeededRng::new(seed, 0)
    }

    #[test]
    fn linear_task_zero_input_gives_zero_label() {
        let mut r = rng(1);
        let task = TaskSpec::sample(TaskKind::Linear, 4, 2, &mut r).unwrap();
        let t = DenseMatrix::zeros(4, 3);
        let s = task.labels(&t).unwrap();
        assert!(s.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn trig_task_zero_row_gives_unit_label() {
        let mut r = rng(2);
        let mut task = TaskSpec::sample(TaskKind::Trig, 3, 2, &mut r).unwrap();
        // Zero the first task-matrix row: cos(0) = 1 for that coordinate.
        for j in 0..3 {
            task.w_task.set(0, j, 0.0).unwrap();
        }
        let t = task.sample_inputs(5, &mut r);
        let s = task.labels(&t).unwrap();
        for j in 0..5 {
            assert_eq!(s.get(0, j), 1.0);
        }
    }

    #[test]
    fn exp_task_labels_match_brute_force_dot_products() {
        let mut r = rng(3);
        let task = TaskSpec::sample(TaskKind::Exp, 5, 2, &mut r).unwrap();
        let t = task.sample_inputs(4, &mut r);
        let s = task.labels(&t).unwrap();
        for j in 0..4 {
            for i in 0..2 {
                let mut acc = 0.0;
                for k in 0..5 {
                    acc += task.w_task.get(i, k) * t.get(k, j);
                }
                assert!((s.get(i, j) - acc.exp()).abs() < 1e-14 * (1.0 + acc.exp()));
            }
        }
    }

    #[test]
    fn batch_masks_query_label_and_keeps_ground_truth() {
        let mut r = rng(4);
        let task = TaskSpec::sample(TaskKind::Linear, 3, 2, &mut r).unwrap();
        let batch = sample_task_batch(&task, 6, &mut r).unwrap();
        assert_eq!(batch.n_tokens(), 6);
        batch.assert_query_masked();
        // Ground truth equals the task map applied to the query input.
        let q_input: Vec<f64> = batch.query()[..3].to_vec();
        let want = task
            .labels(&DenseMatrix::column_vector(&q_input).unwrap())
            .unwrap();
        for i in 0..2 {
            assert!((batch.query_label[i] - want.get(i, 0)).abs() < 1e-15);
        }
        // Demonstration tokens carry their labels unmasked.
        let demos = batch.demos().unwrap();
        let t_demo = demos.slice_rows(0, 3).unwrap();
        let s_demo = demos.slice_rows(3, 2).unwrap();
        let want_demo = task.labels(&t_demo).unwrap();
        for j in 0..5 {
            for i in 0..2 {
                assert_eq!(s_demo.get(i, j), want_demo.get(i, j));
            }
        }
    }

    #[test]
    fn batch_sampling_is_deterministic_per_stream() {
        let mut r1 = rng(9);
        let mut r2 = rng(9);
        let task1 = TaskSpec::sample(TaskKind::Trig, 4, 1, &mut r1).unwrap();
        let task2 = TaskSpec::sample(TaskKind::Trig, 4, 1, &mut r2).unwrap();
        let b1 = sample_task_batch(&task1, 5, &mut r1).unwrap();
        let b2 = sample_task_batch(&task2, 5, &mut r2).unwrap();
        assert_eq!(b1.x.as_slice(), b2.x.as_slice());
        assert_eq!(b1.query_label, b2.query_label);
    }

    #[test]
    fn rejects_batches_without_demonstrations() {
        let mut r = rng(5);
        let task = TaskSpec::sample(TaskKind::Linear, 3, 1, &mut r).unwrap();
        assert!(sample_task_batch(&task, 1, &mut r).is_err());
    }

    #[test]
    fn trig_inputs_live_in_zero_pi() {
        let mut r = rng(6);
        let task = TaskSpec::sample(TaskKind::Trig, 3, 1, &mut r).unwrap();
        let t = task.sample_inputs(50, &mut r);
        assert!(t
            .as_slice()
            .iter()
            .all(|&v| (0.0..std::f64::consts::PI).contains(&v)));
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut cfg = TrainConfig::linear_reference(7);
        assert!(cfg.validate().is_ok());
        cfg.learning_rate = -0.1;
        assert!(cfg.validate().is_err());
        cfg.learning_rate = 0.0;
        assert!(cfg.validate().is_ok(), "zero learning rate is a valid probe");
        cfg.n_tokens_per_step = 1;
        assert!(cfg.validate().is_err());
    }
}
