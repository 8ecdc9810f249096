//! `train`: one deterministic SGD training run of a (possibly modified)
//! kernelized attention layer. Columns: epoch, mse.

use clap::Args;
use serde::{Deserialize, Serialize};

use icl_core::attention::ModificationConfig;
use icl_core::harness::{train_attention_model, TrainConfig};
use icl_core::numerics::SeededRng;

use super::{build_task, effective_json, AugArg, MapArg, RunSummary, TaskArg};
use crate::config::{params_for, ConfigFile};
use crate::error::Result;
use crate::output::{float_field, int_field, resolve_out, write_artifacts};

#[derive(Args, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    /// Task family (default: linear).
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    /// Task input dimension (default: the task's standard dims).
    #[arg(long)]
    pub dt: Option<usize>,
    /// Task label dimension (default: 1).
    #[arg(long)]
    pub ds: Option<usize>,
    /// Tokens per training step, N+1 (default: 16).
    #[arg(long)]
    pub n_tokens: Option<usize>,
    /// Fixed batches per epoch (default: 32).
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
    /// Training epochs (default: 50).
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Plain-SGD learning rate; 0 freezes the model (default: 0.003).
    #[arg(long)]
    pub lr: Option<f64>,
    /// Feature map (default: prf).
    #[arg(long, value_enum)]
    pub map: Option<MapArg>,
    /// Random-feature dimension for the prf map (default: 1200).
    #[arg(long)]
    pub dr: Option<usize>,
    /// Value-side down-weighting of the query column (default: 0).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Negative-sample mixing strength (default: 0).
    #[arg(long)]
    pub beta: Option<f64>,
    /// Negative samples per demonstration, required when beta ≠ 0
    /// (default: 0).
    #[arg(long)]
    pub k: Option<usize>,
    /// Value-side augmentation (default: identity).
    #[arg(long, value_enum)]
    pub g1: Option<AugArg>,
    /// Key-side augmentation (default: identity).
    #[arg(long, value_enum)]
    pub g2: Option<AugArg>,
    /// Residual scale for the parallel augmentation (default: 0.5).
    #[arg(long)]
    pub c: Option<f64>,
    /// Seed (default: 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV path (default: train.csv).
    #[arg(long)]
    pub out: Option<String>,
}

impl Params {
    fn or(self, fallback: Self) -> Self {
        Params {
            task: self.task.or(fallback.task),
            dt: self.dt.or(fallback.dt),
            ds: self.ds.or(fallback.ds),
            n_tokens: self.n_tokens.or(fallback.n_tokens),
            steps_per_epoch: self.steps_per_epoch.or(fallback.steps_per_epoch),
            epochs: self.epochs.or(fallback.epochs),
            lr: self.lr.or(fallback.lr),
            map: self.map.or(fallback.map),
            dr: self.dr.or(fallback.dr),
            alpha: self.alpha.or(fallback.alpha),
            beta: self.beta.or(fallback.beta),
            k: self.k.or(fallback.k),
            g1: self.g1.or(fallback.g1),
            g2: self.g2.or(fallback.g2),
            c: self.c.or(fallback.c),
            seed: self.seed.or(fallback.seed),
            out: self.out.or(fallback.out),
        }
    }
}

#[derive(Serialize)]
pub struct Effective {
    pub task: TaskArg,
    pub dt: usize,
    pub ds: usize,
    pub n_tokens: usize,
    pub steps_per_epoch: usize,
    pub epochs: usize,
    pub lr: f64,
    pub map: MapArg,
    pub dr: usize,
    pub alpha: f64,
    pub beta: f64,
    pub k: usize,
    pub g1: AugArg,
    pub g2: AugArg,
    pub c: f64,
    pub seed: u64,
    pub out: String,
}

pub fn run(cli: Params, cfg: Option<&ConfigFile>) -> Result<RunSummary> {
    let p = cli.or(params_for(cfg, "train")?);
    let task_arg = p.task.unwrap_or(TaskArg::Linear);
    let n_tokens = p.n_tokens.unwrap_or(16);
    let steps_per_epoch = p.steps_per_epoch.unwrap_or(32);
    let epochs = p.epochs.unwrap_or(50);
    let lr = p.lr.unwrap_or(0.003);
    let map = p.map.unwrap_or(MapArg::Prf);
    let dr = p.dr.unwrap_or(1200);
    let alpha = p.alpha.unwrap_or(0.0);
    let beta = p.beta.unwrap_or(0.0);
    let k = p.k.unwrap_or(0);
    let g1 = p.g1.unwrap_or(AugArg::Identity);
    let g2 = p.g2.unwrap_or(AugArg::Identity);
    let c = p.c.unwrap_or(0.5);
    let seed = p.seed.unwrap_or(0);
    let out = p.out.unwrap_or_else(|| "train.csv".to_string());

    let mut rng = SeededRng::new(seed, 0);
    let task = build_task(task_arg.kind(), p.dt, p.ds, &mut rng)?;
    let dim = task.token_dim();
    let modification = ModificationConfig {
        alpha,
        beta,
        k,
        g1: g1.build(dim, c, &mut rng.derive(1)),
        g2: g2.build(dim, c, &mut rng.derive(2)),
    };
    let train_cfg = TrainConfig {
        n_tokens_per_step: n_tokens,
        steps_per_epoch,
        epochs,
        learning_rate: lr,
        modification,
        feature_map: map.feature_map(dr),
        seed,
    };
    let run = train_attention_model(&task, &train_cfg)?;

    let rows: Vec<Vec<String>> = run
        .epoch_losses
        .iter()
        .enumerate()
        .map(|(epoch, mse)| vec![int_field(epoch + 1), float_field(*mse)])
        .collect();

    let effective = Effective {
        task: task_arg,
        dt: task.d_t,
        ds: task.d_s,
        n_tokens,
        steps_per_epoch,
        epochs,
        lr,
        map,
        dr,
        alpha,
        beta,
        k,
        g1,
        g2,
        c,
        seed,
        out: out.clone(),
    };
    let path = resolve_out(&out);
    let rows_written = write_artifacts(
        "train",
        &path,
        &["epoch", "mse"],
        &rows,
        effective_json(&effective),
    )?;
    Ok(RunSummary {
        rows: rows_written,
        out: path,
    })
}
