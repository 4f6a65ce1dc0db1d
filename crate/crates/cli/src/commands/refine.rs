//! `refine` and `deform`.

use std::path::Path;

use anyhow::{Context, Result};
use deformkit::mesh::{mat_to_positions, write_obj};
use deformkit::metrics::{evaluate_map, MapReport};
use deformkit::net::Ljn;
use deformkit::pipeline::{basis_size, deform, refine, InitMap, PreparedShape};
use deformkit::TriMesh;
use serde::Serialize;

use super::{ensure_dir, json_lines, write_file};
use crate::config::RunConfig;
use crate::mapio;

pub enum InitSource<'a> {
    PointToPoint(&'a Path),
    Functional(&'a Path),
}

#[derive(Debug, Serialize)]
pub struct StageReport {
    pub stage: &'static str,
    #[serde(flatten)]
    pub report: MapReport,
}

fn load_mesh(path: &Path) -> Result<TriMesh> {
    TriMesh::load(path).with_context(|| format!("loading {}", path.display()))
}

/// Writes `refined_map.txt`, `embedding.obj` and `report.jsonl` (initial and
/// refined rows) to `out`.
pub fn run_refine(
    cfg: &RunConfig,
    net: &Ljn,
    source: &Path,
    target: &Path,
    init: InitSource<'_>,
    gt: Option<&Path>,
    out: &Path,
) -> Result<Vec<StageReport>> {
    ensure_dir(out)?;
    let (s, t) = (load_mesh(source)?, load_mesh(target)?);
    let init = match init {
        InitSource::PointToPoint(p) => InitMap::PointToPoint(mapio::read_p2p(p)?),
        InitSource::Functional(p) => InitMap::Functional(mapio::read_fmap(p)?),
    };
    let k = cfg.k.min(s.num_vertices()).min(t.num_vertices());
    let kb = basis_size(net, k);
    let src = PreparedShape::new(s.clone(), kb)?;
    let tgt = PreparedShape::new(t.clone(), kb)?;
    let r = refine(net, &src, &tgt, &init, k, cfg.recovery)?;
    let gt = gt.map(mapio::read_p2p).transpose()?;
    let reports = vec![
        StageReport {
            stage: "initial",
            report: evaluate_map(&s, &t, &r.initial, gt.as_deref())?,
        },
        StageReport {
            stage: "refined",
            report: evaluate_map(&s, &t, &r.map, gt.as_deref())?,
        },
    ];
    write_file(&out.join("refined_map.txt"), mapio::format_p2p(&r.map))?;
    write_file(&out.join("embedding.obj"), write_obj(&mat_to_positions(&r.embedding), s.faces()))?;
    write_file(&out.join("report.jsonl"), json_lines(&reports))?;
    Ok(reports)
}

/// Writes `deformed.obj` to `out`.
pub fn run_deform(
    cfg: &RunConfig,
    net: &Ljn,
    source: &Path,
    target: &Path,
    map: Option<&Path>,
    out: &Path,
) -> Result<()> {
    ensure_dir(out)?;
    let (s, t) = (load_mesh(source)?, load_mesh(target)?);
    let map = map.map(mapio::read_p2p).transpose()?;
    let k = cfg.k.min(s.num_vertices()).min(t.num_vertices());
    let kb = basis_size(net, k);
    let src = PreparedShape::new(s.clone(), kb)?;
    let tgt = PreparedShape::new(t, kb)?;
    let v = deform(net, &src, &tgt, map.as_deref(), k, cfg.recovery)?;
    write_file(&out.join("deformed.obj"), write_obj(&mat_to_positions(&v), s.faces()))
}
