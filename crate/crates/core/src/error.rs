use alloc::string::String;

/// Errors raised by the pure tracking core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A box with non-positive width or height was used where a proper box is required.
    #[error("degenerate box: w={w}, h={h}")]
    DegenerateBox { w: f64, h: f64 },

    /// A scalar argument fell outside its admissible range.
    #[error("value {value} outside domain of {what}")]
    Domain { what: &'static str, value: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: String, found: String },

    /// An operation was invoked in a state that does not allow it.
    #[error("invalid state: {0}")]
    State(&'static str),

    #[error("length mismatch: {what} ({left} vs {right})")]
    Length {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("refused: {0}")]
    Refused(String),
}

pub type Result<T> = core::result::Result<T, Error>;
