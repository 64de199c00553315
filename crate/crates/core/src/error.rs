use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("newton solver did not converge after {iterations} iterations (last gradient norm {grad_norm:e})")]
    SolverFailure { iterations: usize, grad_norm: f64 },

    /// A non-finite entry appeared in the chain state.
    #[error("divergence at round {round}: non-finite state ({conditions})")]
    Divergence { round: usize, conditions: String },

    #[error("config file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("config syntax error: {0}")]
    Syntax(String),

    #[error("unknown config key `{0}`")]
    UnknownKey(String),

    #[error("type mismatch for `{key}`: expected {expected}")]
    TypeMismatch { key: String, expected: &'static str },

    #[error("missing required config key `{0}`")]
    MissingKey(String),

    #[error("invalid value for `{key}`: {reason}")]
    Validation { key: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Short machine-readable class, printed by the CLI on failure.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Parameter(_) => "parameter",
            Error::SolverFailure { .. } => "solver-failure",
            Error::Divergence { .. } => "divergence",
            Error::MissingFile(_) => "missing-file",
            Error::Syntax(_) => "syntax",
            Error::UnknownKey(_) => "unknown-key",
            Error::TypeMismatch { .. } => "type-mismatch",
            Error::MissingKey(_) => "missing-key",
            Error::Validation { .. } => "validation",
            Error::Io(_) => "io",
            Error::Context { source, .. } => source.class(),
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Strips any `Context` wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}
