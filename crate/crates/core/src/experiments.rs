//! Scripted experiments: input-signal well-posedness and robustness to the
//! source tessellation.

use faer::MatRef;
use serde::{Deserialize, Serialize};

use crate::deform::{jacobian_between, RecoverySettings};
use crate::error::{Error, Result};
use crate::frames::FaceFrames;
use crate::mesh::TriMesh;
use crate::net::signal::{training_signal, vertex_average, SourceFrames};
use crate::net::Ljn;
use crate::nn;
use crate::operators::DifferentialOperators;
use crate::pipeline::{refine, InitMap, PreparedShape, Reconstruction};
use crate::shapes::{self, CreatureParams, Pose};
use crate::spectral::SpectralBasis;

/// Distances from a seed vertex to every vertex, in input-signal space and
/// in ground-truth Jacobian space. Similar distributions mean distinct
/// inputs go with distinct outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WellPosedness {
    pub seed: usize,
    pub k: usize,
    /// `‖Θᵢ − Θⱼ‖_F` for every `j`.
    pub input: Vec<f64>,
    /// `‖J*ᵢ − J*ⱼ‖_F` with vertex-averaged ground-truth Jacobians.
    pub target: Vec<f64>,
    pub pearson: f64,
    pub spearman: f64,
}

fn row_distances(x: MatRef<'_, f64>, seed: usize) -> Vec<f64> {
    (0..x.nrows())
        .map(|j| (0..x.ncols()).map(|c| (x[(seed, c)] - x[(j, c)]).powi(2)).sum::<f64>().sqrt())
        .collect()
}

/// Pearson correlation; 0 when either side is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Average ranks, ties sharing the mean rank.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for &t in &idx[i..=j] {
            r[t] = avg;
        }
        i = j + 1;
    }
    r
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}

/// Well-posedness diagnostic for a same-connectivity pair.
pub fn well_posedness(source: &TriMesh, target: &TriMesh, k: usize, seed: usize) -> Result<WellPosedness> {
    if source.faces() != target.faces() || source.num_vertices() != target.num_vertices() {
        return Err(Error::DimensionMismatch("the diagnostic needs a same-connectivity pair".into()));
    }
    if seed >= source.num_vertices() {
        return Err(Error::InvalidArgument(format!("seed vertex {seed} out of range")));
    }
    let ops = DifferentialOperators::new(source)?;
    let frames = SourceFrames::new(source)?;
    let tops = DifferentialOperators::new(target)?;
    let k = k.min(target.num_vertices());
    let tb = SpectralBasis::compute(&tops, k)?;
    let theta = training_signal(&ops, &frames, &tb, target.vertex_matrix().as_ref(), k)?;
    let j = jacobian_between(frames.frames(), &FaceFrames::new(target)?)?;
    let jv = vertex_average(&ops, &j);
    let input = row_distances(theta.as_ref(), seed);
    let target = row_distances(jv.as_ref(), seed);
    Ok(WellPosedness {
        seed,
        k,
        pearson: pearson(&input, &target),
        spearman: spearman(&input, &target),
        input,
        target,
    })
}

/// One source resolution of the tessellation experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TessellationRow {
    pub around: usize,
    pub along: usize,
    pub vertices: usize,
    pub faces: usize,
    /// Recovered embedding against the same tessellation posed exactly,
    /// RMS over the bounding-box diagonal.
    pub relative_rms: f64,
    /// Symmetric mean nearest-vertex distance to the fixed target, over the
    /// bounding-box diagonal.
    pub chamfer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TessellationConfig {
    /// Target resolution and the shared underlying surface.
    pub base: (usize, usize),
    /// Source resolutions `(around, along)`.
    pub levels: Vec<(usize, usize)>,
    pub pose_seed: u64,
    pub max_angle: f64,
    pub k: usize,
    pub detail_seed: u64,
}

impl Default for TessellationConfig {
    fn default() -> Self {
        Self {
            base: (24, 30),
            levels: vec![(12, 16), (18, 22), (24, 30), (32, 40)],
            pose_seed: 1,
            max_angle: 0.6,
            k: 40,
            detail_seed: 7,
        }
    }
}

fn chamfer(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> f64 {
    let one_way = |p: MatRef<'_, f64>, q: MatRef<'_, f64>| {
        let nn = nn::nearest(q, p);
        nn.iter()
            .enumerate()
            .map(|(i, &j)| (0..3).map(|c| (p[(i, c)] - q[(j, c)]).powi(2)).sum::<f64>().sqrt())
            .sum::<f64>()
            / p.nrows() as f64
    };
    0.5 * (one_way(a, b) + one_way(b, a))
}

/// Deforms sources of several resolutions toward one posed target, using
/// the exact correspondence of the shared underlying surface.
pub fn tessellation_experiment(net: &Ljn, cfg: &TessellationConfig, settings: RecoverySettings) -> Result<Vec<TessellationRow>> {
    if cfg.levels.is_empty() {
        return Err(Error::InvalidArgument("no tessellation levels".into()));
    }
    let params = |(around, along): (usize, usize)| CreatureParams {
        around,
        along,
        detail_seed: cfg.detail_seed,
        ..Default::default()
    };
    let pose = Pose::random(cfg.pose_seed, cfg.max_angle);
    let base = params(cfg.base);
    let target_rest = shapes::creature(&base);
    let target = shapes::pose(&target_rest, base.length, &pose);
    let kb = cfg.k.max(net.config.k_feat);
    let tgt = PreparedShape::new(target.clone(), kb)?;
    let mut rows = Vec::with_capacity(cfg.levels.len());
    for &level in &cfg.levels {
        let p = params(level);
        let rest = shapes::creature(&p);
        let truth = shapes::pose(&rest, p.length, &pose);
        let map = nn::nearest(target_rest.vertex_matrix().as_ref(), rest.vertex_matrix().as_ref());
        let src = PreparedShape::new(rest.clone(), kb)?;
        let k = cfg.k.min(rest.num_vertices()).min(target.num_vertices());
        let r = refine(net, &src, &tgt, &InitMap::PointToPoint(map), k, settings)?;
        let rec = Reconstruction::new(&r.embedding, &truth)?;
        let row = TessellationRow {
            around: level.0,
            along: level.1,
            vertices: rest.num_vertices(),
            faces: rest.num_faces(),
            relative_rms: rec.relative(),
            chamfer: chamfer(r.embedding.as_ref(), target.vertex_matrix().as_ref()) / target.bbox_diagonal(),
        };
        log::info!("tessellation {}x{}: rms {:.3e}, chamfer {:.3e}", level.0, level.1, row.relative_rms, row.chamfer);
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::NetworkConfig;

    #[test]
    fn correlation_oracles() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert!((pearson(&a, &[2.0, 4.0, 6.0, 8.0]) - 1.0).abs() < 1e-12);
        assert!((pearson(&a, &[8.0, 6.0, 4.0, 2.0]) + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&a, &[1.0; 4]), 0.0);
        // Monotone but nonlinear: rank correlation is exactly 1.
        assert!((spearman(&a, &[1.0, 8.0, 27.0, 64.0]) - 1.0).abs() < 1e-12);
        assert_eq!(ranks(&[3.0, 1.0, 3.0]), vec![1.5, 0.0, 1.5]);
    }

    #[test]
    fn signal_tracks_ground_truth() {
        let p = CreatureParams {
            around: 12,
            along: 16,
            ..Default::default()
        };
        let rest = shapes::creature(&p);
        let posed = shapes::pose(&rest, p.length, &Pose::random(3, 0.8));
        let d = well_posedness(&rest, &posed, 30, 5).unwrap();
        assert_eq!(d.input[5], 0.0);
        assert_eq!(d.target[5], 0.0);
        assert!(d.spearman > 0.5, "{d:?}");
        assert!(well_posedness(&rest, &shapes::icosphere(1), 10, 0).is_err());
    }

    #[test]
    fn tessellation_rows_are_reported() {
        let net = Ljn::new(NetworkConfig {
            hidden: vec![8; 5],
            k_feat: 16,
            ..Default::default()
        })
        .unwrap();
        let cfg = TessellationConfig {
            base: (12, 14),
            levels: vec![(8, 10), (12, 14)],
            k: 12,
            ..Default::default()
        };
        let rows = tessellation_experiment(&net, &cfg, RecoverySettings::default()).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.relative_rms.is_finite() && r.chamfer < 0.05));
        // Matching tessellation with the exact map and a high spatial weight
        // lands on the target.
        assert!(rows[1].relative_rms < 0.02, "{rows:?}");
    }
}
