//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the simulator, the learning core, and the harness.
#[derive(Debug, Error)]
pub enum SrnError {
    /// A configuration field is out of its documented range.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// An argument violates an operation's precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// An internal contract between modules was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Exhaustive association search would exceed the enumeration cap.
    #[error("optimal policy intractable: {count} associations exceed the enumeration cap of {cap}")]
    Intractable { count: u128, cap: u64 },

    /// The centralized agent cannot survive a change of the device count.
    #[error("centralized agent is not scalable: changing the device count alters its action space")]
    NotScalable,

    /// A loss, gradient, or metric stopped being finite.
    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },

    /// Config file could not be parsed.
    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SrnError>;
