//! `approx`: measure how well column-normalized random-feature attention
//! approximates the exact softmax attention matrix as the feature
//! dimension grows. Columns: dr, trial, mse, mae.

use clap::Args;
use serde::{Deserialize, Serialize};

use icl_core::harness::approximation_sweep;
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
    /// Tokens per instance, N+1 (default: 16).
    #[arg(long)]
    pub n: Option<usize>,
    /// Random-feature dimensions to sweep (default: 3,12,120,1200,12000).
    #[arg(long, value_delimiter = ',')]
    pub dr: Option<Vec<usize>>,
    /// Instances per grid point (default: 50).
    #[arg(long)]
    pub trials: Option<usize>,
    /// Base seed (default: 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV path (default: approx.csv).
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
            trials: self.trials.or(fallback.trials),
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
    n: usize,
    dr: Vec<usize>,
    trials: usize,
    seed: u64,
    out: String,
}

pub fn run(cli: Params, cfg: Option<&ConfigFile>) -> Result<RunSummary> {
    let p = cli.or(params_for(cfg, "approx")?);
    let task_arg = p.task.unwrap_or(TaskArg::Linear);
    let n = p.n.unwrap_or(16);
    let grid = p.dr.unwrap_or_else(|| vec![3, 12, 120, 1200, 12000]);
    let trials = p.trials.unwrap_or(50);
    let seed = p.seed.unwrap_or(0);
    let out = p.out.unwrap_or_else(|| "approx.csv".to_string());

    let mut rng = SeededRng::new(seed, 0);
    let task = build_task(task_arg.kind(), p.dt, p.ds, &mut rng)?;
    let table = approximation_sweep(&task, &grid, trials, n, seed)?;

    let rows: Vec<Vec<String>> = table
        .iter()
        .map(|r| {
            vec![
                int_field(r.d_r),
                int_field(r.trial),
                float_field(r.mse),
                float_field(r.mae),
            ]
        })
        .collect();

    let effective = Effective {
        task: task_arg,
        dt: task.d_t,
        ds: task.d_s,
        n,
        dr: grid,
        trials,
        seed,
        out: out.clone(),
    };
    let path = resolve_out(&out);
    let rows_written = write_artifacts(
        "approx",
        &path,
        &["dr", "trial", "mse", "mae"],
        &rows,
        effective_json(&effective),
    )?;
    Ok(RunSummary {
        rows: rows_written,
        out: path,
    })
}
