use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or operand shapes.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch in `{op}`: {detail}")]
    Shape { op: &'static str, detail: String },

    /// An operation was evaluated outside its mathematical domain.
    #[error("numeric domain error in `{op}`: {detail}")]
    NumericDomain { op: &'static str, detail: String },

    /// A caller broke a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("format error: {0}")]
    Format(String),

    /// A loss term became NaN or infinite during training.
    #[error("non-finite value in `{term}` at step {step}: {value}")]
    NonFinite {
        term: &'static str,
        step: usize,
        value: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    /// True for errors caused by bad input data or file formats.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. } | Error::Format(_) | Error::Io(_) | Error::Json(_)
        )
    }

    /// True for numeric failures (domain errors, divergence).
    pub fn is_numeric_error(&self) -> bool {
        matches!(self, Error::NumericDomain { .. } | Error::NonFinite { .. })
    }
}
