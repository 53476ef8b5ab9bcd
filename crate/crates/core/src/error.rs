use thiserror::Error;

/// Errors raised by the simulation and extraction pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("row {row} out of range for an image with {rows} rows")]
    RowOutOfRange { row: usize, rows: usize },

    #[error(
        "frame stack covers [{have_start:.9}, {have_end:.9}] s but [{need_start:.9}, {need_end:.9}] s is required"
    )]
    Coverage {
        need_start: f64,
        need_end: f64,
        have_start: f64,
        have_end: f64,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_mismatch(what: &str, left: impl std::fmt::Debug, right: impl std::fmt::Debug) -> Error {
    Error::ShapeMismatch(format!("{what}: {left:?} vs {right:?}"))
}
