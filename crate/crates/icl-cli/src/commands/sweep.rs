//! `sweep`: train several modification variants against identical data
//! streams (the harness asserts equal batch hashes) and emit one loss
//! curve per variant. Columns: variant, epoch, mse.

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use icl_core::attention::ModificationConfig;
use icl_core::harness::{variant_sweep, TrainConfig};
use icl_core::numerics::SeededRng;

use super::{build_task, effective_json, AugArg, MapArg, RunSummary, TaskArg};
use crate::config::{params_for, ConfigFile};
use crate::error::{CliError, Result};
use crate::output::{float_field, int_field, resolve_out, write_artifacts};

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantArg {
    Normal,
    /// Value-side query down-weighting by `alpha`.
    Regularized,
    /// Negative-sample mixing with `beta` and `k`.
    Negative,
    /// Value-side augmentation `g1`.
    AugmentedG1,
    /// Key-side augmentation `g2`.
    AugmentedG2,
    /// All of the above at once.
    Combined,
}

impl VariantArg {
    pub fn name(self) -> &'static str {
        match self {
            VariantArg::Normal => "normal",
            VariantArg::Regularized => "regularized",
            VariantArg::Negative => "negative",
            VariantArg::AugmentedG1 => "augmented-g1",
            VariantArg::AugmentedG2 => "augmented-g2",
            VariantArg::Combined => "combined",
        }
    }
}

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
    /// Variants to train (default: normal,regularized,negative).
    #[arg(long, value_enum, value_delimiter = ',')]
    pub variants: Option<Vec<VariantArg>>,
    /// Tokens per training step, N+1 (default: 16).
    #[arg(long)]
    pub n_tokens: Option<usize>,
    /// Fixed batches per epoch (default: 32).
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
    /// Training epochs (default: 50).
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Plain-SGD learning rate (default: 0.003).
    #[arg(long)]
    pub lr: Option<f64>,
    /// Feature map (default: prf).
    #[arg(long, value_enum)]
    pub map: Option<MapArg>,
    /// Random-feature dimension for the prf map (default: 1200).
    #[arg(long)]
    pub dr: Option<usize>,
    /// Alpha for the regularized/combined variants (default: 0.1).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Beta for the negative/combined variants (default: 0.1).
    #[arg(long)]
    pub beta: Option<f64>,
    /// Negative samples per demonstration (default: 3).
    #[arg(long)]
    pub k: Option<usize>,
    /// Augmentation architecture for the augmented/combined variants
    /// (default: mlp1-gelu).
    #[arg(long, value_enum)]
    pub aug: Option<AugArg>,
    /// Residual scale for the parallel augmentation (default: 0.5).
    #[arg(long)]
    pub c: Option<f64>,
    /// Seed (default: 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV path (default: sweep.csv).
    #[arg(long)]
    pub out: Option<String>,
}

impl Params {
    fn or(self, fallback: Self) -> Self {
        Params {
            task: self.task.or(fallback.task),
            dt: self.dt.or(fallback.dt),
            ds: self.ds.or(fallback.ds),
            variants: self.variants.or(fallback.variants),
            n_tokens: self.n_tokens.or(fallback.n_tokens),
            steps_per_epoch: self.steps_per_epoch.or(fallback.steps_per_epoch),
            epochs: self.epochs.or(fallback.epochs),
            lr: self.lr.or(fallback.lr),
            map: self.map.or(fallback.map),
            dr: self.dr.or(fallback.dr),
            alpha: self.alpha.or(fallback.alpha),
            beta: self.beta.or(fallback.beta),
            k: self.k.or(fallback.k),
            aug: self.aug.or(fallback.aug),
            c: self.c.or(fallback.c),
            seed: self.seed.or(fallback.seed),
            out: self.out.or(fallback.out),
        }
    }
}

#[derive(Serialize)]
struct Effective {
    task: TaskArg,
    dt: usize,
    ds: usize,
    variants: Vec<VariantArg>,
    n_tokens: usize,
    steps_per_epoch: usize,
    epochs: usize,
    lr: f64,
    map: MapArg,
    dr: usize,
    alpha: f64,
    beta: f64,
    k: usize,
    aug: AugArg,
    c: f64,
    seed: u64,
    out: String,
}

pub fn run(cli: Params, cfg: Option<&ConfigFile>) -> Result<RunSummary> {
    let p = cli.or(params_for(cfg, "sweep")?);
    let task_arg = p.task.unwrap_or(TaskArg::Linear);
    let variants = p
        .variants
        .unwrap_or_else(|| vec![VariantArg::Normal, VariantArg::Regularized, VariantArg::Negative]);
    if variants.is_empty() {
        return Err(CliError::usage("--variants must name at least one variant"));
    }
    let n_tokens = p.n_tokens.unwrap_or(16);
    let steps_per_epoch = p.steps_per_epoch.unwrap_or(32);
    let epochs = p.epochs.unwrap_or(50);
    let lr = p.lr.unwrap_or(0.003);
    let map = p.map.unwrap_or(MapArg::Prf);
    let dr = p.dr.unwrap_or(1200);
    let alpha = p.alpha.unwrap_or(0.1);
    let beta = p.beta.unwrap_or(0.1);
    let k = p.k.unwrap_or(3);
    let aug = p.aug.unwrap_or(AugArg::Mlp1Gelu);
    let c = p.c.unwrap_or(0.5);
    let seed = p.seed.unwrap_or(0);
    let out = p.out.unwrap_or_else(|| "sweep.csv".to_string());

    let mut rng = SeededRng::new(seed, 0);
    let task = build_task(task_arg.kind(), p.dt, p.ds, &mut rng)?;
    let dim = task.token_dim();

    // Augmentation weights come from fixed streams, so any two variants
    // that share an architecture also share its initialization.
    let make_g1 = |rng: &SeededRng| aug.build(dim, c, &mut rng.derive(1));
    let make_g2 = |rng: &SeededRng| aug.build(dim, c, &mut rng.derive(2));
    let configs: Vec<ModificationConfig> = variants
        .iter()
        .map(|v| {
            let mut m = ModificationConfig::neutral();
            match v {
                VariantArg::Normal => {}
                VariantArg::Regularized => m.alpha = alpha,
                VariantArg::Negative => {
                    m.beta = beta;
                    m.k = k;
                }
                VariantArg::AugmentedG1 => m.g1 = make_g1(&rng),
                VariantArg::AugmentedG2 => m.g2 = make_g2(&rng),
                VariantArg::Combined => {
                    m.alpha = alpha;
                    m.beta = beta;
                    m.k = k;
                    m.g1 = make_g1(&rng);
                    m.g2 = make_g2(&rng);
                }
            }
            m
        })
        .collect();

    let base_cfg = TrainConfig {
        n_tokens_per_step: n_tokens,
        steps_per_epoch,
        epochs,
        learning_rate: lr,
        modification: ModificationConfig::neutral(),
        feature_map: map.feature_map(dr),
        seed,
    };
    let runs = variant_sweep(&task, &base_cfg, &configs)?;

    let mut rows = Vec::new();
    for (v, run) in variants.iter().zip(&runs) {
        for (epoch, mse) in run.epoch_losses.iter().enumerate() {
            rows.push(vec![
                v.name().to_string(),
                int_field(epoch + 1),
                float_field(*mse),
            ]);
        }
    }

    let effective = Effective {
        task: task_arg,
        dt: task.d_t,
        ds: task.d_s,
        variants,
        n_tokens,
        steps_per_epoch,
        epochs,
        lr,
        map,
        dr,
        alpha,
        beta,
        k,
        aug,
        c,
        seed,
        out: out.clone(),
    };
    let path = resolve_out(&out);
    let rows_written = write_artifacts(
        "sweep",
        &path,
        &["variant", "epoch", "mse"],
        &rows,
        effective_json(&effective),
    )?;
    Ok(RunSummary {
        rows: rows_written,
        out: path,
    })
}
