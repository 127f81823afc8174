use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("validation error at layer `{layer}`: {message}")]
    Validation { layer: String, message: String },

    #[error("shape error at `{layer}`: {message}")]
    Shape { layer: String, message: String },

    #[error("invalid fold for layer `{layer}`: {message}")]
    InvalidFold { layer: String, message: String },

    #[error("layer `{layer}` is UnrolledSparse but has no sparsity profile entry")]
    MissingProfile { layer: String },

    #[error("layer `{layer}` has no quantization spec")]
    MissingQuantSpec { layer: String },

    #[error("model has no prunable weighted layer")]
    NoPrunableLayers,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("budget of {budget} LUTs is below the minimum configuration cost of {required} LUTs")]
    InfeasibleBudget { required: f64, budget: f64 },

    #[error("search space of {size} configurations exceeds the limit of {limit}")]
    SearchSpaceTooLarge { size: u128, limit: u128 },

    #[error("{what} was computed for model {found}, but the loaded model is {expected}")]
    ChecksumMismatch {
        what: String,
        expected: String,
        found: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn validation(layer: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            layer: layer.into(),
            message: message.into(),
        }
    }

    pub(crate) fn shape(layer: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Shape {
            layer: layer.into(),
            message: message.into(),
        }
    }
}
