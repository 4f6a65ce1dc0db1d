//! Per-vertex MLP with optional spectral projection after hidden layers.
//!
//! All parameters live in one flat vector: for each layer the weight matrix
//! (`in × out`, row-major) followed by the bias.

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::spectral::SpectralBasis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation value.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - z.tanh().powi(2),
        }
    }
}

/// Low-pass operator `ΨΨᵀM` on the leading `k` eigenfunctions.
#[derive(Clone, Copy)]
pub struct Projector<'a> {
    pub basis: &'a SpectralBasis,
    pub k: usize,
}

impl Projector<'_> {
    pub fn apply(&self, x: MatRef<'_, f64>) -> Mat<f64> {
        self.basis
            .project_k(x, self.k)
            .expect("projector shape checked by caller")
    }

    pub fn adjoint(&self, g: MatRef<'_, f64>) -> Mat<f64> {
        self.basis.project_k_adjoint(g, self.k)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    params: Vec<f64>,
}

/// Intermediate values kept for the backward pass.
pub struct Tape {
    /// Input to each layer.
    inputs: Vec<Mat<f64>>,
    /// Pre-activations of each layer.
    pre: Vec<Mat<f64>>,
}

impl Mlp {
    /// Hidden weights uniform in `±√(6/fan_in)`, zero biases; the final
    /// layer is zero when `zero_last` is set.
    pub fn new(dims: &[usize], seed: u64, zero_last: bool) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least one layer");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(Self::count(dims));
        let layers = dims.len() - 1;
        for l in 0..layers {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                if zero_last && l + 1 == layers {
                    params.push(0.0);
                } else {
                    params.push(rng.random_range(-bound..bound));
                }
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Self {
            dims: dims.to_vec(),
            params,
        }
    }

    pub fn from_parts(dims: Vec<usize>, params: Vec<f64>) -> Option<Self> {
        (dims.len() >= 2 && params.len() == Self::count(&dims)).then_some(Self { dims, params })
    }

    fn count(dims: &[usize]) -> usize {
        dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }

    fn offset(&self, layer: usize) -> usize {
        self.dims[..=layer]
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    fn weight(&self, layer: usize) -> MatRef<'_, f64> {
        let o = self.offset(layer);
        let (i, n) = (self.dims[layer], self.dims[layer + 1]);
        MatRef::from_row_major_slice(&self.params[o..o + i * n], i, n)
    }

    fn bias(&self, layer: usize) -> &[f64] {
        let o = self.offset(layer);
        let (i, n) = (self.dims[layer], self.dims[layer + 1]);
        &self.params[o + i * n..o + i * n + n]
    }

    /// Runs the network. Hidden layers use `act`; the first `projected`
    /// hidden layers are followed by `proj` when given.
    pub fn forward(
        &self,
        x: MatRef<'_, f64>,
        act: Activation,
        proj: Option<Projector<'_>>,
        projected: usize,
    ) -> (Mat<f64>, Tape) {
        assert_eq!(x.ncols(), self.dims[0], "input width mismatch");
        let layers = self.num_layers();
        let mut tape = Tape {
            inputs: Vec::with_capacity(layers),
            pre: Vec::with_capacity(layers),
        };
        let mut h = x.to_owned();
        for l in 0..layers {
            let mut z = Mat::zeros(h.nrows(), self.dims[l + 1]);
            matmul(z.as_mut(), Accum::Replace, h.as_ref(), self.weight(l), 1.0, Par::Seq);
            let b = self.bias(l);
            for c in 0..z.ncols() {
                for r in 0..z.nrows() {
                    z[(r, c)] += b[c];
                }
            }
            let next = if l + 1 < layers {
                let a = Mat::from_fn(z.nrows(), z.ncols(), |r, c| act.apply(z[(r, c)]));
                match proj {
                    Some(p) if l < projected => p.apply(a.as_ref()),
                    _ => a,
                }
            } else {
                z.clone()
            };
            tape.inputs.push(std::mem::replace(&mut h, next));
            tape.pre.push(z);
        }
        (h, tape)
    }

    /// Reverse pass: returns the flat parameter gradient and `∂L/∂x`.
    pub fn backward(
        &self,
        tape: &Tape,
        dout: MatRef<'_, f64>,
        act: Activation,
        proj: Option<Projector<'_>>,
        projected: usize,
    ) -> (Vec<f64>, Mat<f64>) {
        let layers = self.num_layers();
        let mut grad = vec![0.0; self.params.len()];
        let mut dz = dout.to_owned();
        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let o = self.offset(l);
            {
                let (gw, gb) = grad[o..o + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
                let gw = faer::MatMut::from_row_major_slice_mut(gw, fan_in, fan_out);
                matmul(gw, Accum::Replace, tape.inputs[l].transpose(), dz.as_ref(), 1.0, Par::Seq);
                for c in 0..fan_out {
                    gb[c] = dz.col(c).iter().sum();
                }
            }
            let mut dh = Mat::zeros(dz.nrows(), fan_in);
            matmul(dh.as_mut(), Accum::Replace, dz.as_ref(), self.weight(l).transpose(), 1.0, Par::Seq);
            if l == 0 {
                return (grad, dh);
            }
            // Undo the previous layer's projection and activation.
            let prev = l - 1;
            let da = match proj {
                Some(p) if prev < projected => p.adjoint(dh.as_ref()),
                _ => dh,
            };
            let z = &tape.pre[prev];
            dz = Mat::from_fn(da.nrows(), da.ncols(), |r, c| da[(r, c)] * act.derivative(z[(r, c)]));
        }
        unreachable!("loop returns at layer 0")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::DifferentialOperators;
    use crate::shapes;

    fn loss(out: &Mat<f64>, w: &Mat<f64>) -> f64 {
        out.col_iter()
            .zip(w.col_iter())
            .map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| x * y).sum::<f64>())
            .sum()
    }

    #[test]
    fn zero_last_layer_gives_zero_output() {
        let mlp = Mlp::new(&[4, 8, 3], 1, true);
        let x = Mat::from_fn(5, 4, |i, j| (i + j) as f64);
        let (y, _) = mlp.forward(x.as_ref(), Activation::Relu, None, 0);
        assert!(y.norm_max() == 0.0);
        assert_eq!(mlp.params().len(), 4 * 8 + 8 + 8 * 3 + 3);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mesh = shapes::icosphere(1);
        let ops = DifferentialOperators::new(&mesh).unwrap();
        let basis = SpectralBasis::compute(&ops, 10).unwrap();
        let proj = Projector { basis: &basis, k: 10 };
        let n = mesh.num_vertices();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Mat::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));
        let w = Mat::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        for act in [Activation::Tanh, Activation::Relu] {
            let mut mlp = Mlp::new(&[3, 6, 5, 2], 7, false);
            let (y, tape) = mlp.forward(x.as_ref(), act, Some(proj), 2);
            let (g, dx) = mlp.backward(&tape, w.as_ref(), act, Some(proj), 2);
            let h = 1e-6;
            let f = |m: &Mlp, x: &Mat<f64>| loss(&m.forward(x.as_ref(), act, Some(proj), 2).0, &w);
            let _ = y;
            for i in (0..mlp.params().len()).step_by(3) {
                let orig = mlp.params()[i];
                mlp.params_mut()[i] = orig + h;
                let up = f(&mlp, &x);
                mlp.params_mut()[i] = orig - h;
                let dn = f(&mlp, &x);
                mlp.params_mut()[i] = orig;
                let fd = (up - dn) / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-6 * (1.0 + fd.abs()), "{act:?} param {i}: {fd} vs {}", g[i]);
            }
            for (r, c) in [(0, 0), (5, 1), (11, 2)] {
                let mut xp = x.clone();
                xp[(r, c)] += h;
                let mut xm = x.clone();
                xm[(r, c)] -= h;
                let fd = (f(&mlp, &xp) - f(&mlp, &xm)) / (2.0 * h);
                assert!((fd - dx[(r, c)]).abs() < 1e-6 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn init_is_seeded() {
        assert_eq!(Mlp::new(&[9, 16, 9], 4, true), Mlp::new(&[9, 16, 9], 4, true));
        assert_ne!(Mlp::new(&[9, 16, 9], 4, true), Mlp::new(&[9, 16, 9], 5, true));
        let m = Mlp::new(&[9, 16, 9], 4, false);
        let bound = (6.0f64 / 9.0).sqrt();
        assert!(m.params()[..9 * 16].iter().all(|v| v.abs() <= bound));
    }
}
