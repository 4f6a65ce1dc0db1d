//! Procedural test geometry: spheres, planar grids, bars, and articulated
//! tube "creatures" with surface detail and posable bends.
//!
//! Everything here is deterministic given its parameters and seed.

use std::collections::{HashMap, HashSet};

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mesh::TriMesh;

/// Unit icosphere; `level` 0 has 12 vertices, each level roughly quadruples.
pub fn icosphere(level: usize) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut v: Vec<Vector3<f64>> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vector3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..level {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut midpoint = |a: usize, b: usize, v: &mut Vec<Vector3<f64>>| -> usize {
            *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                v.push(((v[a] + v[b]) * 0.5).normalize());
                v.len() - 1
            })
        };
        for f in &faces {
            let a = midpoint(f[0], f[1], &mut v);
            let b = midpoint(f[1], f[2], &mut v);
            let c = midpoint(f[2], f[0], &mut v);
            next.push([f[0], a, c]);
            next.push([f[1], b, a]);
            next.push([f[2], c, b]);
            next.push([a, b, c]);
        }
        faces = next;
    }
    TriMesh::new(v, faces).expect("icosphere is valid")
}

/// Latitude-longitude unit sphere with `rings` interior latitude rings of
/// `segments` vertices each, plus two poles. Symmetric under `z -> -z`.
pub fn uv_sphere(rings: usize, segments: usize) -> TriMesh {
    assert!(rings >= 1 && segments >= 3);
    let mut v = vec![Vector3::new(0.0, 0.0, 1.0)];
    for r in 0..rings {
        let theta = std::f64::consts::PI * (r + 1) as f64 / (rings + 1) as f64;
        for s in 0..segments {
            let phi = 2.0 * std::f64::consts::PI * s as f64 / segments as f64;
            v.push(Vector3::new(
                theta.sin() * phi.cos(),
                theta.sin() * phi.sin(),
                theta.cos(),
            ));
        }
    }
    v.push(Vector3::new(0.0, 0.0, -1.0));
    let south = v.len() - 1;
    let idx = |r: usize, s: usize| 1 + r * segments + (s % segments);
    let mut f = Vec::new();
    for s in 0..segments {
        f.push([0, idx(0, s), idx(0, s + 1)]);
    }
    for r in 0..rings - 1 {
        for s in 0..segments {
            f.push([idx(r, s), idx(r + 1, s), idx(r + 1, s + 1)]);
            f.push([idx(r, s), idx(r + 1, s + 1), idx(r, s + 1)]);
        }
    }
    for s in 0..segments {
        f.push([south, idx(rings - 1, s + 1), idx(rings - 1, s)]);
    }
    TriMesh::new(v, f).expect("uv sphere is valid")
}

/// Planar grid on the unit square (z = 0) with `nx * ny` vertices; interior
/// vertices are jittered by up to `jitter` cell widths.
pub fn jittered_grid(nx: usize, ny: usize, jitter: f64, seed: u64) -> TriMesh {
    assert!(nx >= 2 && ny >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hx = 1.0 / (nx - 1) as f64;
    let hy = 1.0 / (ny - 1) as f64;
    let mut v = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let mut p = Vector3::new(i as f64 * hx, j as f64 * hy, 0.0);
            if i > 0 && j > 0 && i + 1 < nx && j + 1 < ny {
                p.x += jitter * hx * rng.random_range(-0.5..0.5);
                p.y += jitter * hy * rng.random_range(-0.5..0.5);
            }
            v.push(p);
        }
    }
    let id = |i: usize, j: usize| j * nx + i;
    let mut f = Vec::new();
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            if (i + j) % 2 == 0 {
                f.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                f.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
            } else {
                f.push([id(i, j), id(i + 1, j), id(i, j + 1)]);
                f.push([id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
    }
    TriMesh::new(v, f).expect("grid is valid")
}

/// Vertices on edges that have a single incident face.
pub fn boundary_vertices(mesh: &TriMesh) -> HashSet<usize> {
    let mut count: HashMap<(usize, usize), usize> = HashMap::new();
    for f in mesh.faces() {
        for c in 0..3 {
            let (a, b) = (f[c], f[(c + 1) % 3]);
            *count.entry((a.min(b), a.max(b))).or_default() += 1;
        }
    }
    count
        .into_iter()
        .filter(|&(_, n)| n == 1)
        .flat_map(|((a, b), _)| [a, b])
        .collect()
}

/// Uniformly random rotation (deterministic in `seed`).
pub fn random_rotation(seed: u64) -> Matrix3<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let axis = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let angle = rng.random_range(0.3..2.8);
    Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).into_inner()
}

/// Closed tube along `+x` with rounded caps.
#[derive(Debug, Clone, PartialEq)]
pub struct CreatureParams {
    /// Vertices around the tube.
    pub around: usize,
    /// Rings along the tube (excluding the two cap poles).
    pub along: usize,
    pub length: f64,
    pub radius: f64,
    /// Number of Gaussian surface bumps (detail).
    pub bumps: usize,
    pub bump_height: f64,
    /// Seed for bump placement. Two creatures with the same seed and
    /// different resolutions sample the same underlying surface.
    pub detail_seed: u64,
}

impl Default for CreatureParams {
    fn default() -> Self {
        Self {
            around: 24,
            along: 30,
            length: 4.0,
            radius: 0.45,
            bumps: 14,
            bump_height: 0.12,
            detail_seed: 7,
        }
    }
}

impl CreatureParams {
    /// Smooth bar without detail, for editing experiments.
    pub fn bar(around: usize, along: usize) -> Self {
        Self {
            around,
            along,
            bumps: 0,
            bump_height: 0.0,
            ..Self::default()
        }
    }
}

/// Rest-pose creature surface.
pub fn creature(p: &CreatureParams) -> TriMesh {
    assert!(p.around >= 3 && p.along >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(p.detail_seed);
    let bumps: Vec<(f64, f64, f64, f64)> = (0..p.bumps)
        .map(|_| {
            (
                rng.random_range(0.1..0.9),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.6..1.0) * p.bump_height,
                rng.random_range(0.04..0.08),
            )
        })
        .collect();
    // Body profile: thicker "torso" in the first third, thinner tail.
    let profile = |u: f64| 1.0 + 0.25 * (-((u - 0.3) / 0.18).powi(2)).exp() - 0.2 * u;
    let surface = |u: f64, phi: f64| -> Vector3<f64> {
        // Cap rounding: radius shrinks to zero at both ends.
        let cap = |t: f64| (1.0 - (1.0 - t.clamp(0.0, 1.0)).powi(2)).sqrt();
        let taper = cap(u / 0.06) * cap((1.0 - u) / 0.06);
        let mut r = p.radius * profile(u) * taper;
        for &(bu, bphi, h, w) in &bumps {
            let dphi = ((phi - bphi + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU)
                - std::f64::consts::PI)
                * p.radius;
            let du = (u - bu) * p.length;
            r += h * taper * (-(du * du + dphi * dphi) / (2.0 * w * w * p.length)).exp();
        }
        Vector3::new(u * p.length, r * phi.cos(), r * phi.sin())
    };
    let mut v = vec![Vector3::new(0.0, 0.0, 0.0)];
    for k in 0..p.along {
        let u = (k as f64 + 0.5) / p.along as f64;
        // Stagger alternate rings for better-shaped triangles.
        let offset = if k % 2 == 0 { 0.0 } else { 0.5 };
        for s in 0..p.around {
            let phi = std::f64::consts::TAU * (s as f64 + offset) / p.around as f64;
            v.push(surface(u, phi));
        }
    }
    v.push(Vector3::new(p.length, 0.0, 0.0));
    let tail = v.len() - 1;
    let idx = |k: usize, s: usize| 1 + k * p.around + (s % p.around);
    let mut f = Vec::new();
    for s in 0..p.around {
        f.push([0, idx(0, s + 1), idx(0, s)]);
    }
    for k in 0..p.along - 1 {
        for s in 0..p.around {
            if k % 2 == 0 {
                f.push([idx(k, s), idx(k, s + 1), idx(k + 1, s)]);
                f.push([idx(k, s + 1), idx(k + 1, s + 1), idx(k + 1, s)]);
            } else {
                f.push([idx(k, s), idx(k + 1, s + 1), idx(k + 1, s)]);
                f.push([idx(k, s), idx(k, s + 1), idx(k + 1, s + 1)]);
            }
        }
    }
    for s in 0..p.around {
        f.push([tail, idx(p.along - 1, s), idx(p.along - 1, s + 1)]);
    }
    TriMesh::new(v, f).expect("creature is valid")
}

/// Articulation applied to a rest-pose tube along `+x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    /// `(axial position as fraction of length, bend angle in radians)`.
    pub bends: Vec<(f64, f64)>,
    /// Smoothing width of each joint, as a fraction of length.
    pub joint_width: f64,
    /// Total twist about the axis (radians), distributed linearly.
    pub twist: f64,
}

impl Pose {
    pub fn rest() -> Self {
        Self {
            bends: Vec::new(),
            joint_width: 0.08,
            twist: 0.0,
        }
    }

    /// Random pose with two joints.
    pub fn random(seed: u64, max_angle: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            bends: vec![
                (0.35, rng.random_range(-max_angle..max_angle)),
                (0.68, rng.random_range(-max_angle..max_angle)),
            ],
            joint_width: 0.08,
            twist: rng.random_range(-0.5..0.5) * max_angle,
        }
    }
}

/// Applies a pose: the axis is bent in the xy-plane by smooth joints and
/// cross-sections are carried along rigidly (a near-isometric deformation).
pub fn pose(mesh: &TriMesh, length: f64, pose: &Pose) -> TriMesh {
    const STEPS: usize = 4096;
    let ds = length / STEPS as f64;
    let curvature = |x: f64| -> f64 {
        pose.bends
            .iter()
            .map(|&(at, angle)| {
                let w = pose.joint_width * length;
                let z = (x - at * length) / w;
                angle * (-0.5 * z * z).exp() / (w * (2.0 * std::f64::consts::PI).sqrt())
            })
            .sum()
    };
    let mut angle = vec![0.0; STEPS + 1];
    let mut centre = vec![Vector3::zeros(); STEPS + 1];
    for k in 0..STEPS {
        let x0 = k as f64 * ds;
        angle[k + 1] = angle[k] + 0.5 * ds * (curvature(x0) + curvature(x0 + ds));
        let a = 0.5 * (angle[k] + angle[k + 1]);
        centre[k + 1] = centre[k] + Vector3::new(a.cos(), a.sin(), 0.0) * ds;
    }
    let sample = |x: f64| -> (f64, Vector3<f64>) {
        let t = (x / ds).clamp(0.0, STEPS as f64);
        let k = (t.floor() as usize).min(STEPS - 1);
        let w = t - k as f64;
        let a = angle[k] * (1.0 - w) + angle[k + 1] * w;
        let c = centre[k] * (1.0 - w) + centre[k + 1] * w;
        // Outside the sampled range extend linearly along the end tangent.
        let extra = if x < 0.0 {
            x
        } else if x > length {
            x - length
        } else {
            0.0
        };
        (a, c + Vector3::new(a.cos(), a.sin(), 0.0) * extra)
    };
    let v = mesh
        .vertices()
        .iter()
        .map(|p| {
            let (a, c) = sample(p.x);
            let tw = pose.twist * (p.x / length).clamp(0.0, 1.0);
            let (y, z) = (
                p.y * tw.cos() - p.z * tw.sin(),
                p.y * tw.sin() + p.z * tw.cos(),
            );
            c + Vector3::new(-a.sin(), a.cos(), 0.0) * y + Vector3::new(0.0, 0.0, 1.0) * z
        })
        .collect();
    mesh.with_vertices(v).expect("posed creature is valid")
}
