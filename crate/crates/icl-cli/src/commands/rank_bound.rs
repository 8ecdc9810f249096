//! `rank-bound`: sample random feed-forward blocks, read off the rank
//! upper bound of the ReLU-masked linear map, and average per hidden
//! width. Columns: dh, mean_bound.

use clap::Args;
use serde::{Deserialize, Serialize};

use icl_core::harness::rank_bound_experiment;
use icl_core::numerics::SeededRng;

use super::{effective_json, RunSummary};
use crate::config::{params_for, ConfigFile};
use crate::error::Result;
use crate::output::{float_field, int_field, resolve_out, write_artifacts};

#[derive(Args, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    /// Model dimension (default: 12).
    #[arg(long)]
    pub d: Option<usize>,
    /// Hidden widths to sweep (default: 12,24,33,48).
    #[arg(long, value_delimiter = ',')]
    pub dh: Option<Vec<usize>>,
    /// Sampled blocks per repetition (default: 128).
    #[arg(long)]
    pub batches: Option<usize>,
    /// Repetitions (default: 3).
    #[arg(long)]
    pub reps: Option<usize>,
    /// Seed (default: 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV path (default: rank_bound.csv).
    #[arg(long)]
    pub out: Option<String>,
}

impl Params {
    fn or(self, fallback: Self) -> Self {
        Params {
            d: self.d.or(fallback.d),
            dh: self.dh.or(fallback.dh),
            batches: self.batches.or(fallback.batches),
            reps: self.reps.or(fallback.reps),
            seed: self.seed.or(fallback.seed),
            out: self.out.or(fallback.out),
        }
    }
}

#[derive(Serialize)]
struct Effective {
    d: usize,
    dh: Vec<usize>,
    batches: usize,
    reps: usize,
    seed: u64,
    out: String,
}

pub fn run(cli: Params, cfg: Option<&ConfigFile>) -> Result<RunSummary> {
    let p = cli.or(params_for(cfg, "rank-bound")?);
    let d = p.d.unwrap_or(12);
    let dh = p.dh.unwrap_or_else(|| vec![12, 24, 33, 48]);
    let batches = p.batches.unwrap_or(128);
    let reps = p.reps.unwrap_or(3);
    let seed = p.seed.unwrap_or(0);
    let out = p.out.unwrap_or_else(|| "rank_bound.csv".to_string());

    let mut rng = SeededRng::new(seed, 0);
    let table = rank_bound_experiment(d, &dh, batches, reps, &mut rng)?;

    let rows: Vec<Vec<String>> = table
        .iter()
        .map(|r| vec![int_field(r.d_h), float_field(r.mean_bound)])
        .collect();

    let effective = Effective {
        d,
        dh,
        batches,
        reps,
        seed,
        out: out.clone(),
    };
    let path = resolve_out(&out);
    let rows_written = write_artifacts(
        "rank-bound",
        &path,
        &["dh", "mean_bound"],
        &rows,
        effective_json(&effective),
    )?;
    Ok(RunSummary {
        rows: rows_written,
        out: path,
    })
}
