use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("initialization failed: {0}")]
    Init(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("refusing to prune all {0} gaussians")]
    DegenerateCloud(usize),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("timestep {0} outside [1, {1}]")]
    Range(u32, u32),

    #[error("non-finite values in {0}")]
    Numerics(&'static str),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("ring topology violated: {0}")]
    Topology(String),

    #[error("image has no opaque pixels to crop to")]
    EmptySubject,

    #[error("no target registered for condition {0}")]
    UnknownCondition(String),

    #[error("malformed {kind} file: {msg}")]
    Format { kind: &'static str, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(kind: &'static str, msg: impl Into<String>) -> Self {
        Error::Format {
            kind,
            msg: msg.into(),
        }
    }
}
