//! `eval`: map metrics per pair plus an aggregate row.

use anyhow::{Context, Result};
use deformkit::metrics::{evaluate_map, MapReport};
use serde::Serialize;

use crate::manifest::Pair;
use crate::mapio;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub pair: String,
    #[serde(flatten)]
    pub report: MapReport,
}

pub fn evaluate_pair(pair: &Pair) -> Result<EvalRow> {
    let path = pair
        .map
        .as_deref()
        .with_context(|| format!("pair {} has no map to evaluate", pair.name))?;
    let (s, t) = pair.load_meshes()?;
    let map = mapio::read_p2p(path)?;
    let gt = pair.gt_map.as_deref().map(mapio::read_p2p).transpose()?;
    let report = evaluate_map(&s, &t, &map, gt.as_deref()).with_context(|| format!("pair {}", pair.name))?;
    Ok(EvalRow {
        pair: pair.name.clone(),
        report,
    })
}

/// Evaluates pairs on worker threads and collects rows in input order.
pub fn evaluate_all(pairs: &[Pair]) -> Result<Vec<EvalRow>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(pairs.len()).max(1);
    let mut results: Vec<Option<Result<EvalRow>>> = (0..pairs.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunks = results.chunks_mut(pairs.len().div_ceil(workers));
        for (ci, chunk) in chunks.enumerate() {
            let start = ci * pairs.len().div_ceil(workers);
            scope.spawn(move || {
                for (i, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(evaluate_pair(&pairs[start + i]));
                }
            });
        }
    });
    results.into_iter().map(|r| r.expect("every pair is evaluated")).collect()
}

/// Mean of every metric; the geodesic mean covers pairs with ground truth.
pub fn aggregate(rows: &[EvalRow]) -> EvalRow {
    let n = rows.len().max(1) as f64;
    let mean = |f: fn(&MapReport) -> f64| rows.iter().map(|r| f(&r.report)).sum::<f64>() / n;
    let geo: Vec<f64> = rows.iter().filter_map(|r| r.report.geodesic_error).collect();
    EvalRow {
        pair: "aggregate".into(),
        report: MapReport {
            geodesic_error: (!geo.is_empty()).then(|| geo.iter().sum::<f64>() / geo.len() as f64),
            inversion: mean(|r| r.inversion),
            dirichlet: mean(|r| r.dirichlet),
            coverage: mean(|r| r.coverage),
        },
    }
}
