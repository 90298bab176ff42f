//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape contract violated by a tensor operation.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A kernel produced or received a non-finite value.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// Attention was invoked with an empty key set.
    #[error("attention requires at least one key")]
    EmptyKeys,

    /// A softmax row had every position masked out.
    #[error("fully masked softmax row {0}")]
    FullyMaskedRow(usize),

    /// Generation window received more rows than its capacity.
    #[error("generation window overflow: {got} rows exceed capacity {capacity}")]
    WindowOverflow { got: usize, capacity: usize },

    /// The generation window is full; the caller must sync before appending.
    #[error("generation window full: sync required before appending")]
    MustSync,

    /// An inference-session operation was called out of lifecycle order.
    #[error("lifecycle violation: {0}")]
    Lifecycle(String),

    /// Invalid model configuration.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Malformed textual input (variant name or config file).
    #[error("parse error: {0}")]
    Parse(String),

    /// Not enough data to compute a summary statistic.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A buffer could not be allocated (desk-scale analogue of OOM).
    #[error("allocation failure while reserving {0} bytes")]
    Alloc(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
