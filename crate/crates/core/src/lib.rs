//! Triangle-mesh deformation via learned per-face Jacobian fields.
//!
//! Layers, bottom-up: [`mesh`] and [`operators`] (discrete differential
//! geometry), [`spectral`] (Laplace–Beltrami bases and maps), [`deform`]
//! (Jacobians, Poisson integration, embedding recovery), [`net`] (the
//! Jacobian-predicting network and its training), [`metrics`] and
//! [`editing`].

pub mod deform;
pub mod editing;
pub mod error;
pub mod experiments;
pub mod frames;
pub mod mesh;
pub mod metrics;
pub mod net;
pub mod nn;
pub mod operators;
pub mod pipeline;
pub mod shapes;
pub mod sparse;
pub mod spectral;

pub use error::{Error, Result};
pub use mesh::TriMesh;
