use alloc::string::String;

/// Errors raised by the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("pairing error: {0}")]
    Pairing(String),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("normalization error: {0}")]
    Normalization(String),
    #[error("empty mask: {0}")]
    EmptyMask(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    /// Raised by log or checkpoint sinks supplied to the training loop.
    #[error("output sink failed: {0}")]
    Sink(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
