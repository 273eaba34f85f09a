use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes do not fit the operation.
    Shape {
        op: &'static str,
        left: alloc::vec::Vec<usize>,
        right: alloc::vec::Vec<usize>,
    },
    /// A class label outside `[0, classes)`.
    Label { label: usize, classes: usize },
    /// An operation produced NaN or an infinity.
    NonFinite { op: &'static str },
    /// Sampling from a buffer that holds nothing.
    EmptyBuffer,
    /// A precondition of the called operation was violated.
    Contract(&'static str),
    /// Invalid stream, model or optimizer settings.
    Invalid(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, left, right } => {
                write!(f, "{op}: incompatible shapes {left:?} and {right:?}")
            }
            Error::Label { label, classes } => {
                write!(f, "label {label} out of range for {classes} classes")
            }
            Error::NonFinite { op } => write!(f, "{op}: non-finite value produced"),
            Error::EmptyBuffer => f.write_str("replay buffer is empty"),
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::Invalid(msg) => write!(f, "invalid configuration: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
