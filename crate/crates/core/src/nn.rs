//! Exact nearest-neighbour queries with lowest-index tie breaking.
//!
//! Small problems use blocked brute force (a GEMM screen followed by an exact
//! re-check of every candidate); 3-D point sets above [`KD_TREE_THRESHOLD`]
//! use a kd-tree. Both paths compare the same exactly-evaluated squared
//! distances, so they agree bit for bit.

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par};

pub const KD_TREE_THRESHOLD: usize = 20_000;

const BLOCK: usize = 256;

/// For every row of `queries`, the index of the nearest row of `points`.
pub fn nearest(points: MatRef<'_, f64>, queries: MatRef<'_, f64>) -> Vec<usize> {
    assert_eq!(points.ncols(), queries.ncols(), "dimension mismatch");
    assert!(points.nrows() > 0, "empty point set");
    if points.ncols() == 3 && points.nrows() > KD_TREE_THRESHOLD {
        let pts: Vec<[f64; 3]> = (0..points.nrows())
            .map(|i| [points[(i, 0)], points[(i, 1)], points[(i, 2)]])
            .collect();
        let tree = KdTree::new(&pts);
        (0..queries.nrows())
            .map(|i| tree.nearest(&[queries[(i, 0)], queries[(i, 1)], queries[(i, 2)]]))
            .collect()
    } else {
        brute_force(points, queries)
    }
}

#[inline]
fn exact_sq(points: MatRef<'_, f64>, j: usize, queries: MatRef<'_, f64>, i: usize) -> f64 {
    let mut s = 0.0;
    for d in 0..points.ncols() {
        let t = points[(j, d)] - queries[(i, d)];
        s += t * t;
    }
    s
}

fn brute_force(points: MatRef<'_, f64>, queries: MatRef<'_, f64>) -> Vec<usize> {
    let n = points.nrows();
    let dim = points.ncols();
    let pnorm: Vec<f64> = (0..n)
        .map(|j| (0..dim).map(|d| points[(j, d)].powi(2)).sum())
        .collect();
    let mut out = Vec::with_capacity(queries.nrows());
    let mut gram = Mat::<f64>::zeros(0, 0);
    for start in (0..queries.nrows()).step_by(BLOCK) {
        let end = (start + BLOCK).min(queries.nrows());
        let q = queries.subrows(start, end - start);
        gram.resize_with(end - start, n, |_, _| 0.0);
        matmul(gram.as_mut(), Accum::Replace, q, points.transpose(), 1.0, Par::Seq);
        for r in 0..end - start {
            let qn: f64 = (0..dim).map(|d| q[(r, d)].powi(2)).sum();
            let mut approx_min = f64::INFINITY;
            let mut scale = 0.0f64;
            for j in 0..n {
                let a = pnorm[j] - 2.0 * gram[(r, j)];
                if a < approx_min {
                    approx_min = a;
                }
                scale = scale.max(pnorm[j]);
            }
            // Rounding in the expanded form is bounded by a few ulps of the
            // norms involved; anything within that slack is re-checked.
            let slack = 1e-10 * (qn + scale) + f64::MIN_POSITIVE;
            let mut best = usize::MAX;
            let mut best_d = f64::INFINITY;
            for j in 0..n {
                if pnorm[j] - 2.0 * gram[(r, j)] <= approx_min + slack {
                    let d = exact_sq(points, j, queries, start + r);
                    if d < best_d {
                        best_d = d;
                        best = j;
                    }
                }
            }
            out.push(best);
        }
    }
    out
}

/// Reference scan used by tests: exact distances against every point.
pub fn nearest_naive(points: MatRef<'_, f64>, queries: MatRef<'_, f64>) -> Vec<usize> {
    (0..queries.nrows())
        .map(|i| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for j in 0..points.nrows() {
                let d = exact_sq(points, j, queries, i);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Static 3-D kd-tree over a point slice.
pub struct KdTree<'a> {
    points: &'a [[f64; 3]],
    nodes: Vec<Node>,
    root: usize,
}

enum Node {
    Leaf(Vec<usize>),
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

const LEAF_SIZE: usize = 16;

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [[f64; 3]]) -> Self {
        let mut nodes = Vec::new();
        let mut idx: Vec<usize> = (0..points.len()).collect();
        let root = Self::build(points, &mut idx, &mut nodes);
        Self {
            points,
            nodes,
            root,
        }
    }

    fn build(points: &[[f64; 3]], idx: &mut [usize], nodes: &mut Vec<Node>) -> usize {
        if idx.len() <= LEAF_SIZE {
            let mut leaf = idx.to_vec();
            leaf.sort_unstable();
            nodes.push(Node::Leaf(leaf));
            return nodes.len() - 1;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in idx.iter() {
            for d in 0..3 {
                lo[d] = lo[d].min(points[i][d]);
                hi[d] = hi[d].max(points[i][d]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0);
        let mid = idx.len() / 2;
        idx.select_nth_unstable_by(mid, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
        });
        let value = points[idx[mid]][axis];
        let (l, r) = idx.split_at_mut(mid);
        let left = Self::build(points, l, nodes);
        let right = Self::build(points, r, nodes);
        nodes.push(Node::Split {
            axis,
            value,
            left,
            right,
        });
        nodes.len() - 1
    }

    pub fn nearest(&self, q: &[f64; 3]) -> usize {
        let mut best = (f64::INFINITY, usize::MAX);
        self.search(self.root, q, &mut best);
        best.1
    }

    fn search(&self, node: usize, q: &[f64; 3], best: &mut (f64, usize)) {
        match &self.nodes[node] {
            Node::Leaf(ids) => {
                for &i in ids {
                    let p = &self.points[i];
                    let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                    if d < best.0 || (d == best.0 && i < best.1) {
                        *best = (d, i);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[*axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(*near, q, best);
                // Points equal to the split value may sit on either side, so
                // ties must still be visited.
                if diff * diff <= best.0 {
                    self.search(*far, q, best);
                }
            }
        }
    }
}
