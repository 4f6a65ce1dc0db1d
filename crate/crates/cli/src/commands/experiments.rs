//! `diagnose` and `tessellation`.

use std::path::Path;

use anyhow::{Context, Result};
use deformkit::experiments::{tessellation_experiment, well_posedness, TessellationRow, WellPosedness};
use deformkit::net::Ljn;
use deformkit::TriMesh;

use super::{ensure_dir, json_lines, write_file};
use crate::config::RunConfig;

/// Writes `diagnose.json`.
pub fn diagnose(source: &Path, target: &Path, k: usize, vertex: usize, out: &Path) -> Result<WellPosedness> {
    ensure_dir(out)?;
    let s = TriMesh::load(source).with_context(|| format!("loading {}", source.display()))?;
    let t = TriMesh::load(target).with_context(|| format!("loading {}", target.display()))?;
    let d = well_posedness(&s, &t, k, vertex)?;
    write_file(&out.join("diagnose.json"), serde_json::to_string(&d)? + "\n")?;
    Ok(d)
}

/// Writes `tessellation.jsonl`, one row per source resolution.
pub fn tessellation(cfg: &RunConfig, net: &Ljn, out: &Path) -> Result<Vec<TessellationRow>> {
    ensure_dir(out)?;
    let rows = tessellation_experiment(net, &cfg.tessellation, cfg.recovery)?;
    write_file(&out.join("tessellation.jsonl"), json_lines(&rows))?;
    Ok(rows)
}
