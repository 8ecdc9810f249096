//! `equivalence`: for each seed, sample a task batch, run the attention
//! layer and its gradient-descent dual side by side, and emit the per-step
//! L2 distance between the dual prediction and the attention output
//! (relative to the attention output norm). Columns: seed, step, l2_error.

use clap::Args;
use serde::{Deserialize, Serialize};

use icl_core::harness::equivalence_experiment;
use icl_core::numerics::SeededRng;

use super::{build_task, effective_json, MapArg, RunSummary, TaskArg};
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
    /// Number of demonstration tokens N (default: 15).
    #[arg(long)]
    pub n: Option<usize>,
    /// Feature map (default: prf).
    #[arg(long, value_enum)]
    pub map: Option<MapArg>,
    /// Random-feature dimension for the prf map (default: 1200).
    #[arg(long)]
    pub dr: Option<usize>,
    /// Number of seeds, used as 'seed', 'seed'+1, … (default: 3).
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Base seed (default: 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV path (default: equivalence.csv).
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
            map: self.map.or(fallback.map),
            dr: self.dr.or(fallback.dr),
            seeds: self.seeds.or(fallback.seeds),
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
    map: MapArg,
    dr: usize,
    seeds: usize,
    seed: u64,
    out: String,
}

pub fn run(cli: Params, cfg: Option<&ConfigFile>) -> Result<RunSummary> {
    let p = cli.or(params_for(cfg, "equivalence")?);
    let task_arg = p.task.unwrap_or(TaskArg::Linear);
    let n = p.n.unwrap_or(15);
    let map = p.map.unwrap_or(MapArg::Prf);
    let dr = p.dr.unwrap_or(1200);
    let n_seeds = p.seeds.unwrap_or(3);
    let seed = p.seed.unwrap_or(0);
    let out = p.out.unwrap_or_else(|| "equivalence.csv".to_string());

    let mut rng = SeededRng::new(seed, 0);
    let task = build_task(task_arg.kind(), p.dt, p.ds, &mut rng)?;
    let seeds: Vec<u64> = (0..n_seeds as u64).map(|i| seed + i).collect();
    let reports = equivalence_experiment(&task, n + 1, map.feature_map(dr), &seeds, None)?;

    let mut rows = Vec::new();
    for (s, report) in seeds.iter().zip(&reports) {
        let scale = report.reference_norm.max(f64::MIN_POSITIVE);
        for (step, dist) in report.distances.iter().enumerate() {
            rows.push(vec![
                int_field(*s as usize),
                int_field(step),
                float_field(dist / scale),
            ]);
        }
    }

    let effective = Effective {
        task: task_arg,
        dt: task.d_t,
        ds: task.d_s,
        n,
        map,
        dr,
        seeds: n_seeds,
        seed,
        out: out.clone(),
    };
    let path = resolve_out(&out);
    let rows_written = write_artifacts(
        "equivalence",
        &path,
        &["seed", "step", "l2_error"],
        &rows,
        effective_json(&effective),
    )?;
    Ok(RunSummary {
        rows: rows_written,
        out: path,
    })
}
