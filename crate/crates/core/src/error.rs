use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("edge {index} is degenerate (length {length:e})")]
    DegenerateEdge { index: usize, length: f64 },

    #[error("face {index} is degenerate (area {area:e})")]
    DegenerateFace { index: usize, area: f64 },

    #[error("{element} {index} references vertex {vertex}, but the shape has {count} vertices")]
    IndexOutOfRange {
        element: &'static str,
        index: usize,
        vertex: usize,
        count: usize,
    },

    #[error("shape is empty")]
    EmptyShape,

    #[error("matrix is not a rotation (orthogonality defect {defect:e}, determinant {det})")]
    NotARotation { defect: f64, det: f64 },

    #[error("size mismatch: expected {expected}, found {found}")]
    SizeMismatch { expected: usize, found: usize },

    #[error("non-finite state at integration step {step}")]
    NonFinite { step: usize },

    #[error("reverse flow did not converge at step {step}")]
    FlowInversion { step: usize },

    #[error("non-finite objective at the initial point")]
    NonFiniteStart,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid tree spec: {0}")]
    InvalidSpec(String),

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unsupported shape file extension: {}", .0.display())]
    UnsupportedExtension(PathBuf),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
