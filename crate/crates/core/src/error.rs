use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("truncated STL: expected {expected} bytes, found {found}")]
    TruncatedStl { expected: usize, found: usize },

    #[error("STL triangle count mismatch: header says {declared}, body holds {actual}")]
    TriangleCountMismatch { declared: usize, actual: usize },

    #[error("malformed {format} input at line {line}: {msg}")]
    Parse {
        format: &'static str,
        line: usize,
        msg: String,
    },

    #[error("non-finite coordinate in {0}")]
    NonFinite(&'static str),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("face {0} is degenerate (zero area)")]
    DegenerateFace(usize),

    #[error("vertex {0} has fewer than two neighbours")]
    IsolatedVertex(usize),

    #[error("singular Jacobian in normal optimisation at vertex {vertex} after {restarts} restarts")]
    SingularJacobian { vertex: usize, restarts: usize },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("mesh has no faces")]
    EmptyMesh,

    #[error("only {0} valid correspondences, at least 3 required")]
    TooFewCorrespondences(usize),

    #[error("registration diverged: residual grew for {0} consecutive iterations")]
    Divergence(usize),

    #[error("matrix is not positive definite ({0})")]
    NotPositiveDefinite(&'static str),

    #[error("face selection is empty")]
    EmptySelection,

    #[error("artifact provenance mismatch: {0}")]
    ProvenanceMismatch(String),

    #[error("unknown {kind} strategy `{name}` (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
