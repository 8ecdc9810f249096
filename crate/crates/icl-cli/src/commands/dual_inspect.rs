//! `dual-inspect`: build the dual model for a single sampled instance and
//! dump the comparison in detail — attention output, dual prediction, and
//! the per-step distance trace. Columns: field, index, value.

use clap::Args;
use serde::{Deserialize, Serialize};

use icl_core::attention::{AttentionWeights, ContextLayout};
use icl_core::dual::verify_equivalence;
use icl_core::harness::sample_task_batch;
use icl_core::numerics::SeededRng;

use super::{build_task, effective_json, MapArg, RunSummary, TaskArg};
use crate::config::{params_for, ConfigFile};
use crate::error::{CliError, Result};
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
    /// Gradient-descent steps: 1 (full batch) or N (one per demonstration;
    /// default).
    #[arg(long)]
    pub steps: Option<usize>,
    /// Seed (default: 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV path (default: dual_inspect.csv).
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
            steps: self.steps.or(fallback.steps),
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
    steps: usize,
    seed: u64,
    out: String,
}

pub fn run(cli: Params, cfg: Option<&ConfigFile>) -> Result<RunSummary> {
    let p = cli.or(params_for(cfg, "dual-inspect")?);
    let task_arg = p.task.unwrap_or(TaskArg::Linear);
    let n = p.n.unwrap_or(15);
    let map = p.map.unwrap_or(MapArg::Prf);
    let dr = p.dr.unwrap_or(1200);
    let steps = p.steps.unwrap_or(n);
    if steps != 1 && steps != n {
        return Err(CliError::usage(format!(
            "--steps must be 1 or N = {n}, got {steps}"
        )));
    }
    let seed = p.seed.unwrap_or(0);
    let out = p.out.unwrap_or_else(|| "dual_inspect.csv".to_string());

    let mut rng = SeededRng::new(seed, 0);
    let task = build_task(task_arg.kind(), p.dt, p.ds, &mut rng)?;
    let dim = task.token_dim();
    let batch = sample_task_batch(&task, n + 1, &mut rng)?;
    let weights = AttentionWeights::random(dim, dim, &mut rng);
    let spec = map.feature_map(dr).materialize(dim, &mut rng)?;
    let layout = ContextLayout::demos_with_self(n);

    let report = verify_equivalence(
        &batch.demos()?,
        None,
        batch.query(),
        &weights,
        &spec,
        &layout,
        steps,
    )?;

    let mut rows = Vec::new();
    let scale = report.reference_norm.max(f64::MIN_POSITIVE);
    rows.push(vec![
        "reference_norm".to_string(),
        int_field(0),
        float_field(report.reference_norm),
    ]);
    rows.push(vec![
        "final_distance".to_string(),
        int_field(0),
        float_field(report.final_distance),
    ]);
    rows.push(vec![
        "final_relative_error".to_string(),
        int_field(0),
        float_field(report.final_relative_error()),
    ]);
    for (i, v) in report.attention_output.iter().enumerate() {
        rows.push(vec![
            "attention_output".to_string(),
            int_field(i),
            float_field(*v),
        ]);
    }
    for (i, v) in report.dual_prediction.iter().enumerate() {
        rows.push(vec![
            "dual_prediction".to_string(),
            int_field(i),
            float_field(*v),
        ]);
    }
    for (step, d) in report.distances.iter().enumerate() {
        rows.push(vec![
            "step_relative_error".to_string(),
            int_field(step),
            float_field(d / scale),
        ]);
    }

    let effective = Effective {
        task: task_arg,
        dt: task.d_t,
        ds: task.d_s,
        n,
        map,
        dr,
        steps,
        seed,
        out: out.clone(),
    };
    let path = resolve_out(&out);
    let rows_written = write_artifacts(
        "dual-inspect",
        &path,
        &["field", "index", "value"],
        &rows,
        effective_json(&effective),
    )?;
    Ok(RunSummary {
        rows: rows_written,
        out: path,
    })
}
