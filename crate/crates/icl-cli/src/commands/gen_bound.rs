//! `gen-bound`: for each context size N, compute the feature-space Gram
//! trace of N sampled tokens, the resulting generalization-bound
//! surrogate, and the median empirical generalization gap of the
//! norm-constrained dual minimizer. Columns: n, trace, bound, median_gap.

use clap::Args;
use serde::{Deserialize, Serialize};

use icl_core::attention::AttentionWeights;
use icl_core::generalization::{bound_surrogate, empirical_gap, gram_trace, BoundInputs};
use icl_core::kernel::FeatureMapKind;
use icl_core::numerics::SeededRng;

use super::{build_task, effective_json, RunSummary, TaskArg};
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
    /// Context sizes to evaluate (default: 8,16,32,64,128,256,512).
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    /// Random-feature dimension for the Gram trace (default: 256).
    #[arg(long)]
    pub dr: Option<usize>,
    /// Norm budget w for the dual weights (default: 1).
    #[arg(long)]
    pub w: Option<f64>,
    /// Value-norm bound rho (default: 1).
    #[arg(long)]
    pub rho: Option<f64>,
    /// Confidence level delta (default: 0.05).
    #[arg(long)]
    pub delta: Option<f64>,
    /// Optional effective rank r for the refined bound variant.
    #[arg(long)]
    pub r: Option<f64>,
    /// Seeds for the empirical-gap median (default: 20).
    #[arg(long)]
    pub gap_seeds: Option<usize>,
    /// Evaluation tokens per gap estimate (default: 256).
    #[arg(long)]
    pub eval_samples: Option<usize>,
    /// Base seed (default: 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV path (default: gen_bound.csv).
    #[arg(long)]
    pub out: Option<String>,
}

impl Params {
    fn or(self, fallback: Self) -> Self {
        Params {
            task: self.task.or(fallback.task),
            dt: self.dt.or(fallback.dt),
            ds: self.ds.or(fallback.ds),
            n: self.n.or(fallback.n),
            dr: self.dr.or(fallback.dr),
            w: self.w.or(fallback.w),
            rho: self.rho.or(fallback.rho),
            delta: self.delta.or(fallback.delta),
            r: self.r.or(fallback.r),
            gap_seeds: self.gap_seeds.or(fallback.gap_seeds),
            eval_samples: self.eval_samples.or(fallback.eval_samples),
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
    n: Vec<usize>,
    dr: usize,
    w: f64,
    rho: f64,
    delta: f64,
    r: Option<f64>,
    gap_seeds: usize,
    eval_samples: usize,
    seed: u64,
    out: String,
}

pub fn run(cli: Params, cfg: Option<&ConfigFile>) -> Result<RunSummary> {
    let p = cli.or(params_for(cfg, "gen-bound")?);
    let task_arg = p.task.unwrap_or(TaskArg::Linear);
    let n_list = p.n.unwrap_or_else(|| vec![8, 16, 32, 64, 128, 256, 512]);
    let dr = p.dr.unwrap_or(256);
    let w = p.w.unwrap_or(1.0);
    let rho = p.rho.unwrap_or(1.0);
    let delta = p.delta.unwrap_or(0.05);
    let gap_seeds = p.gap_seeds.unwrap_or(20);
    let eval_samples = p.eval_samples.unwrap_or(256);
    let seed = p.seed.unwrap_or(0);
    let out = p.out.unwrap_or_else(|| "gen_bound.csv".to_string());

    let mut rng = SeededRng::new(seed, 0);
    let task = build_task(task_arg.kind(), p.dt, p.ds, &mut rng)?;
    let dim = task.token_dim();
    let weights = AttentionWeights::random(dim, dim, &mut rng);
    let spec = FeatureMapKind::PositiveRandomFeatures { d_r: dr }.materialize(dim, &mut rng)?;

    let seeds: Vec<u64> = (0..gap_seeds as u64).map(|i| seed + i).collect();
    let gap_rows = empirical_gap(&task, w, &n_list, eval_samples, &seeds)?;

    let mut rows = Vec::with_capacity(n_list.len());
    for (idx, &n) in n_list.iter().enumerate() {
        let mut sample_rng = rng.derive(1_000 + idx as u64);
        let tokens = task.sample_tokens(n, &mut sample_rng)?;
        let gt = gram_trace(&tokens, &weights.w_k, &spec)?;
        let inputs = BoundInputs {
            w,
            rho,
            d_o: dim,
            n,
            delta,
            r: p.r,
        };
        let bound = bound_surrogate(&inputs, gt.trace)?;
        rows.push(vec![
            int_field(n),
            float_field(gt.trace),
            float_field(bound),
            float_field(gap_rows[idx].median_gap),
        ]);
    }

    let effective = Effective {
        task: task_arg,
        dt: task.d_t,
        ds: task.d_s,
        n: n_list,
        dr,
        w,
        rho,
        delta,
        r: p.r,
        gap_seeds,
        eval_samples,
        seed,
        out: out.clone(),
    };
    let path = resolve_out(&out);
    let rows_written = write_artifacts(
        "gen-bound",
        &path,
        &["n", "trace", "bound", "median_gap"],
        &rows,
        effective_json(&effective),
    )?;
    Ok(RunSummary {
        rows: rows_written,
        out: path,
    })
}
