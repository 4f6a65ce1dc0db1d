use std::path::PathBuf;

/// Errors produced by mesh processing, solvers, and training.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("face {face} references vertex {index}, but the mesh has {count} vertices")]
    IndexOutOfRange {
        face: usize,
        index: usize,
        count: usize,
    },

    #[error("handle indices {indices:?} out of range for {count} vertices")]
    InvalidHandles { indices: Vec<usize>, count: usize },

    #[error("degenerate faces (repeated vertex or near-zero area): {faces:?}")]
    DegenerateFaces { faces: Vec<usize> },

    #[error("vertices not referenced by any face: {vertices:?}")]
    IsolatedVertices { vertices: Vec<usize> },

    #[error("mesh has {components} connected components, expected 1")]
    Disconnected { components: usize },

    #[error("singular frame on face {face}")]
    SingularFrame { face: usize },

    #[error("singular Jacobian on faces {faces:?}")]
    SingularJacobian { faces: Vec<usize> },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("eigen solver failed: {0}")]
    EigenSolver(String),

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("non-finite value in loss term `{term}`")]
    NonFinite { term: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
