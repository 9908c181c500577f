use thiserror::Error;

/// Errors shared by every module in the crate.
///
/// `Config` carries the path of the offending field so scenario files can be
/// debugged without a stack trace. `Divergence` is a *signal*, not a crash:
/// a step that produces a non-finite value reports the first offending state
/// by name and callers decide whether to stop or continue.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("divergence: non-finite value in signal `{signal}`")]
    Divergence { signal: String },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
}

impl ModelError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        ModelError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        ModelError::Usage(message.into())
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        ModelError::Numerical(message.into())
    }
}

/// Checks that a value is strictly positive, naming the field otherwise.
pub fn require_positive(field: &str, value: f64) -> Result<(), ModelError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(ModelError::config(
            field,
            format!("must be a positive finite number, got {value}"),
        ))
    }
}

pub fn require_finite(field: &str, value: f64) -> Result<(), ModelError> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(ModelError::config(field, format!("must be finite, got {value}")))
    }
}
