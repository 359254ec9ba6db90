use thiserror::Error;

pub type Result<T> = std::result::Result<T, AloError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AloError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid task: {0}")]
    InvalidTask(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("duplicate entry for lambda={lambda} method={method}")]
    Conflict { lambda: f64, method: String },

    #[error("matrix shape required: {0}")]
    Shape(String),

    /// A point sits on (or within the margin of) a kink of a prox or projection map.
    #[error("degenerate point: {0}")]
    Degenerate(String),

    #[error("repeated singular values or eigenvalues: {0}")]
    DegenerateSpectrum(String),

    #[error("ill-conditioned system (smallest pivot {pivot:.3e}): {context}")]
    Conditioning { context: String, pivot: f64 },

    #[error("non-positive curvature of the conjugate loss at observation {index}")]
    Curvature { index: usize },

    #[error("engine {engine} does not support {what}")]
    Unsupported { engine: String, what: String },

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("fit did not converge (residual {residual:.3e})")]
    StaleFit { residual: f64 },

    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },

    #[error("parse error: {0}")]
    Parse(String),
}

impl AloError {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        AloError::Dimension(msg.into())
    }

    pub(crate) fn unsupported(engine: impl Into<String>, what: impl Into<String>) -> Self {
        AloError::Unsupported {
            engine: engine.into(),
            what: what.into(),
        }
    }
}
