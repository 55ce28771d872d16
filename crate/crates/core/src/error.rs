use thiserror::Error;

/// Errors produced by the rendering engine.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("occlusion graph contains a cycle through {0:?}")]
    Cycle(Vec<String>),

    #[error("bounding box {bbox:?} covers no cell center on a {width}x{height} grid")]
    DegenerateBox {
        bbox: [f64; 4],
        width: usize,
        height: usize,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("{what} = {value} is outside {range}")]
    Range {
        what: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("index {index} out of bounds for length {len}")]
    Index { index: usize, len: usize },

    #[error("object {0:?} has an empty prompt and no subject index")]
    EmptyPrompt(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown object id {0:?}")]
    UnknownObject(String),

    #[error("scene failed validation: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("non-finite value in {0}")]
    NonFinite(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn dims_mismatch(expected: impl ToString, found: impl ToString) -> Error {
    Error::DimensionMismatch {
        expected: expected.to_string(),
        found: found.to_string(),
    }
}
