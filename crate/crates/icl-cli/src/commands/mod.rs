//! One module per subcommand. Each defines a `Params` struct that doubles
//! as the clap argument set and the config-file schema (every field
//! optional; flags override file values), an `Effective` struct with the
//! fully resolved values that is echoed into the metadata sidecar, and a
//! `run` entry point returning the written row count and path.

pub mod approx;
pub mod dual_inspect;
pub mod equivalence;
pub mod gen_bound;
pub mod rank_bound;
pub mod sweep;
pub mod train;

use std::path::PathBuf;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use icl_core::attention::{Activation, Augmentation};
use icl_core::harness::{TaskKind, TaskSpec};
use icl_core::kernel::FeatureMapKind;
use icl_core::numerics::SeededRng;

use crate::error::Result;

/// What a command wrote, for the final status line.
pub struct RunSummary {
    pub rows: usize,
    pub out: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskArg {
    Linear,
    Trig,
    Exp,
}

impl TaskArg {
    pub fn kind(self) -> TaskKind {
        match self {
            TaskArg::Linear => TaskKind::Linear,
            TaskArg::Trig => TaskKind::Trig,
            TaskArg::Exp => TaskKind::Exp,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapArg {
    /// Positive random features (unbiased softmax-kernel estimator).
    Prf,
    /// Deterministic elu+1 feature map.
    Elu,
}

impl MapArg {
    pub fn feature_map(self, d_r: usize) -> FeatureMapKind {
        match self {
            MapArg::Prf => FeatureMapKind::PositiveRandomFeatures { d_r },
            MapArg::Elu => FeatureMapKind::EluPlusOne,
        }
    }
}

/// Key/value augmentation architectures selectable from the command line.
#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AugArg {
    Identity,
    Mlp1Gelu,
    Mlp2Gelu,
    Mlp1Elu,
    Mlp2Elu,
    /// Residual two-layer GELU block scaled by the constant `c`.
    Parallel,
}

impl AugArg {
    pub fn build(self, dim: usize, c: f64, rng: &mut SeededRng) -> Augmentation {
        match self {
            AugArg::Identity => Augmentation::identity(),
            AugArg::Mlp1Gelu => Augmentation::mlp_one_layer(dim, Activation::Gelu, rng),
            AugArg::Mlp2Gelu => Augmentation::mlp_two_layer(dim, 2 * dim, Activation::Gelu, rng),
            AugArg::Mlp1Elu => Augmentation::mlp_one_layer(dim, Activation::Elu, rng),
            AugArg::Mlp2Elu => Augmentation::mlp_two_layer(dim, 2 * dim, Activation::Elu, rng),
            AugArg::Parallel => Augmentation::parallel_mlp(dim, c, rng),
        }
    }
}

/// Builds the task: explicit dims when given, otherwise the per-kind
/// standard dims (linear 11→1, trig 7→1, exp 6→1). The task matrix is
/// drawn from `rng`.
pub fn build_task(
    kind: TaskKind,
    d_t: Option<usize>,
    d_s: Option<usize>,
    rng: &mut SeededRng,
) -> Result<TaskSpec> {
    let spec = match (d_t, d_s) {
        (None, None) => TaskSpec::standard(kind, rng)?,
        (dt, ds) => {
            let standard = match kind {
                TaskKind::Linear => 11,
                TaskKind::Trig => 7,
                TaskKind::Exp => 6,
            };
            TaskSpec::sample(kind, dt.unwrap_or(standard), ds.unwrap_or(1), rng)?
        }
    };
    Ok(spec)
}

/// Serializes an `Effective` struct for the sidecar.
pub fn effective_json<T: Serialize>(effective: &T) -> serde_json::Value {
    serde_json::to_value(effective).expect("effective configs are plain data")
}
