use std::path::PathBuf;

/// Errors produced anywhere in the descriptor pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("face {face} cannot be triangulated ({arity} vertices)")]
    NonTriangulable { face: usize, arity: usize },

    #[error("empty mesh: {0}")]
    EmptyMesh(String),

    #[error("all {0} faces are degenerate")]
    AllFacesDegenerate(usize),

    #[error("face {face} references vertex {index} out of range (|V| = {n})")]
    IndexOutOfRange { face: usize, index: usize, n: usize },

    #[error("non-finite cotangent weight in face {0}")]
    NonFiniteCotangent(usize),

    #[error("solver did not converge: relative residual {residual:e} after {iterations} iterations")]
    SolverBreakdown { residual: f64, iterations: usize },

    #[error("matrix is not positive definite at pivot {0}")]
    NotPositiveDefinite(usize),

    #[error("eigensolver failed: {0}")]
    EigenFailure(String),

    #[error("graph is disconnected ({components} components)")]
    Disconnected { components: usize },

    #[error("requested {requested} but only {available} available")]
    TooMany { requested: usize, available: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("raw responses were not retained for this field stack")]
    RawNotRetained,

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("unknown diagnostic '{name}'; available: {available}")]
    UnknownDiagnostic { name: String, available: String },

    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
