//! Deterministic experiment outputs: a CSV results file (UTF-8, LF line
//! endings, floats at round-trip precision) plus a JSON metadata sidecar
//! at `<out>.meta.json` carrying everything needed to re-run the command.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, Result};

/// Artifact schema version recorded in every sidecar.
pub const ARTIFACT_VERSION: u32 = 1;

/// Environment variable naming the default directory for relative output
/// paths.
pub const OUT_DIR_ENV: &str = "ICL_LAB_OUT_DIR";

/// Round-trip float formatting: 17 significant digits in scientific
/// notation, so the printed form parses back to the identical f64.
pub fn float_field(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn int_field(v: usize) -> String {
    v.to_string()
}

/// Resolves an output path: absolute paths pass through; relative paths
/// land under `$ICL_LAB_OUT_DIR` when that is set, else the working
/// directory.
pub fn resolve_out(out: &str) -> PathBuf {
    let p = Path::new(out);
    if p.is_absolute() {
        return p.to_path_buf();
    }
    match std::env::var_os(OUT_DIR_ENV) {
        Some(dir) if !dir.is_empty() => Path::new(&dir).join(p),
        _ => p.to_path_buf(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> CliError + '_ {
    move |e| match e.into_kind() {
        csv::ErrorKind::Io(source) => CliError::Io {
            path: path.display().to_string(),
            source,
        },
        other => CliError::Usage(format!("csv error on {}: {other:?}", path.display())),
    }
}

/// Writes `rows` (already formatted) under `header` to `path`. Line
/// terminator is LF; an empty row set produces a header-only file.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(io_err(path))?;
        }
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        debug_assert_eq!(row.len(), header.len(), "rows must be homogeneous");
        w.write_record(row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

#[derive(Serialize)]
struct Sidecar<'a> {
    artifact_version: u32,
    command: &'a str,
    rng_algorithm: &'a str,
    row_count: usize,
    effective_config: serde_json::Value,
}

/// Writes the results CSV and its `<out>.meta.json` sidecar; returns the
/// row count.
pub fn write_artifacts(
    command: &str,
    out: &Path,
    header: &[&str],
    rows: &[Vec<String>],
    effective_config: serde_json::Value,
) -> Result<usize> {
    write_csv(out, header, rows)?;
    let sidecar = Sidecar {
        artifact_version: ARTIFACT_VERSION,
        command,
        rng_algorithm: icl_core::numerics::RNG_ALGORITHM,
        row_count: rows.len(),
        effective_config,
    };
    let meta_path = PathBuf::from(format!("{}.meta.json", out.display()));
    let body = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| CliError::Usage(format!("metadata serialization failed: {e}")))?;
    std::fs::write(&meta_path, body + "\n").map_err(io_err(&meta_path))?;
    Ok(rows.len())
}
