//! The Jacobian-predicting network, its input signals, losses and training.

pub mod adam;
pub mod checkpoint;
pub mod mlp;
pub mod signal;
pub mod supervised;
pub mod train;
pub mod unsupervised;

use faer::{Mat, MatRef};
use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::deform::JacobianField;
use crate::error::{Error, Result};
use crate::operators::DifferentialOperators;
use crate::spectral::SpectralBasis;
pub use mlp::{Activation, Mlp, Projector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    /// Widths of the hidden layers.
    pub hidden: Vec<usize>,
    /// How many leading hidden layers are followed by a spectral projection.
    pub projected_layers: usize,
    /// Eigenfunctions used by the projection layers.
    pub k_feat: usize,
    /// Eigenfunctions used for coordinate projection of the input signal.
    pub k_coord: usize,
    pub input_dim: usize,
    pub activation: Activation,
    /// Ablation switch for the projection layers.
    pub spectral_projection: bool,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256; 5],
            projected_layers: 4,
            k_feat: 128,
            k_coord: 40,
            input_dim: 9,
            activation: Activation::Relu,
            spectral_projection: true,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim];
        d.extend(&self.hidden);
        d.push(9);
        d
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::InvalidArgument("hidden widths must be nonempty and positive".into()));
        }
        if self.projected_layers > self.hidden.len() {
            return Err(Error::InvalidArgument(format!(
                "{} projected layers but only {} hidden layers",
                self.projected_layers,
                self.hidden.len()
            )));
        }
        if self.input_dim == 0 || self.k_feat == 0 || self.k_coord == 0 {
            return Err(Error::InvalidArgument("sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Loss weights for the supervised (`α₁..α₃`) and unsupervised (`α₆, α₇`)
/// objectives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub alpha6: f64,
    pub alpha7: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha1: 1.0,
            alpha2: 10.0,
            alpha3: 2.0,
            alpha6: 20.0,
            alpha7: 10.0,
        }
    }
}

/// Network plus its configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Ljn {
    pub config: NetworkConfig,
    pub mlp: Mlp,
}

/// Forward-pass state needed by [`Ljn::backward`].
pub struct LjnTape {
    tape: mlp::Tape,
}

/// Row-major flattening of the identity, the output offset.
const FLAT_IDENTITY: [f64; 9] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];

impl Ljn {
    /// Fresh network with a zero output layer (the identity deformation).
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mlp = Mlp::new(&config.dims(), config.seed, true);
        Ok(Self { config, mlp })
    }

    fn projector<'a>(&self, basis: &'a SpectralBasis) -> Result<Option<Projector<'a>>> {
        if !self.config.spectral_projection || self.config.projected_layers == 0 {
            return Ok(None);
        }
        let k = self.config.k_feat;
        if k > basis.num_vertices() {
            return Err(Error::InvalidArgument(format!(
                "k_feat = {k} exceeds the vertex count {}",
                basis.num_vertices()
            )));
        }
        if k > basis.k() {
            return Err(Error::InvalidArgument(format!(
                "k_feat = {k} but the basis holds {} eigenfunctions",
                basis.k()
            )));
        }
        Ok(Some(Projector { basis, k }))
    }

    /// Predicts a per-face Jacobian field from the per-vertex signal `Θ`
    /// (`|V| × 9`). Returns the flattened field (`|F| × 9`) as well.
    pub fn forward(
        &self,
        ops: &DifferentialOperators,
        basis: &SpectralBasis,
        theta: MatRef<'_, f64>,
    ) -> Result<(JacobianField, Mat<f64>, LjnTape)> {
        if theta.nrows() != ops.num_vertices() || theta.ncols() != self.config.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "signal is {}x{}, expected {}x{}",
                theta.nrows(),
                theta.ncols(),
                ops.num_vertices(),
                self.config.input_dim
            )));
        }
        if basis.num_vertices() != ops.num_vertices() {
            return Err(Error::DimensionMismatch("basis belongs to another mesh".into()));
        }
        let proj = self.projector(basis)?;
        let (mut y, tape) = self.mlp.forward(theta, self.config.activation, proj, self.config.projected_layers);
        for r in 0..y.nrows() {
            for (c, v) in FLAT_IDENTITY.iter().enumerate() {
                y[(r, c)] += v;
            }
        }
        let faces = ops.vertex_to_face().mul_dense(y.as_ref());
        Ok((unflatten(faces.as_ref()), faces, LjnTape { tape }))
    }

    /// Given `∂L/∂Ĵ` (`|F| × 9`), returns parameter gradients and `∂L/∂Θ`.
    pub fn backward(
        &self,
        ops: &DifferentialOperators,
        basis: &SpectralBasis,
        tape: &LjnTape,
        d_faces: MatRef<'_, f64>,
    ) -> Result<(Vec<f64>, Mat<f64>)> {
        let proj = self.projector(basis)?;
        let dy = ops.vertex_to_face().tmul_dense(d_faces);
        Ok(self.mlp.backward(
            &tape.tape,
            dy.as_ref(),
            self.config.activation,
            proj,
            self.config.projected_layers,
        ))
    }
}

/// `|F| × 9` row-major flattening of a Jacobian field.
pub fn flatten(field: &JacobianField) -> Mat<f64> {
    let mats = field.as_slice();
    Mat::from_fn(mats.len(), 9, |f, c| mats[f][(c / 3, c % 3)])
}

pub fn unflatten(m: MatRef<'_, f64>) -> JacobianField {
    JacobianField::new(
        (0..m.nrows())
            .map(|f| Matrix3::from_fn(|r, c| m[(f, 3 * r + c)]))
            .collect(),
    )
}
