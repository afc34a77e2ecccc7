use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or configuration value violates its invariant. The string
    /// names the offending field.
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("cut-on degeneracy at mode {mode}: |k^2 - mu_n| = {gap:e} is below tolerance")]
    CutOnDegeneracy { mode: usize, gap: f64 },

    #[error("singular Green's function evaluation: field point ({x}, {y}) coincides with the source")]
    SingularEvaluation { x: f64, y: f64 },

    #[error("point ({x}, {y}) lies outside the waveguide [0, {depth}]")]
    OutsideWaveguide { x: f64, y: f64, depth: f64 },

    #[error("source {index}: {source}")]
    Source {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("source at ({x}, {y}) does not sit on a search-grid node")]
    OffGrid { x: f64, y: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    #[error("malformed {kind} file: {detail}")]
    Format { kind: &'static str, detail: String },

    #[error("refusing to overwrite existing file {0}")]
    AlreadyExists(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn shape(
        context: impl Into<String>,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn format(kind: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            kind,
            detail: detail.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter { .. } | Error::Json(_) => 2,
            Error::Io(_) | Error::Format { .. } | Error::AlreadyExists(_) => 4,
            Error::Source { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}
