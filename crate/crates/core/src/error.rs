use std::fmt;

/// Errors surfaced by every fallible operation in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("geometry error in {context}: {axis} axis {detail}")]
    Geometry {
        context: String,
        axis: &'static str,
        detail: String,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical divergence: {0}")]
    Divergence(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(msg: impl fmt::Display) -> Self {
        Error::Shape(msg.to_string())
    }

    pub(crate) fn config(msg: impl fmt::Display) -> Self {
        Error::Config(msg.to_string())
    }

    /// Re-labels a geometry or shape error with the model layer it came from.
    pub fn in_layer(self, index: usize, kind: &str) -> Self {
        let context = format!("layer {index} ({kind})");
        match self {
            Error::Geometry { axis, detail, .. } => Error::Geometry {
                context,
                axis,
                detail,
            },
            Error::Shape(msg) => Error::Shape(format!("{context}: {msg}")),
            Error::Config(msg) => Error::Config(format!("{context}: {msg}")),
            other => other,
        }
    }
}
