use thiserror::Error;

/// Unified error type for construction and contract failures across the
/// library.
#[derive(Debug, Error)]
pub enum Error {
    /// Operands or subsystem factorizations disagree on dimensions.
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    /// A structural invariant failed (non-Hermitian state, non-unitary
    /// matrix, incomplete channel, negative eigenvalue, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A scalar parameter is outside its documented range.
    #[error("invalid parameter {name}: {message}")]
    Parameter { name: &'static str, message: String },

    /// An input file failed schema validation; `path` names the offending
    /// field (dotted, e.g. `states.2.ng.S0`).
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn parameter(name: &'static str, msg: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            message: msg.into(),
        }
    }

    pub(crate) fn schema(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            message: msg.into(),
        }
    }
}
