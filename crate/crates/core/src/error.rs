use alloc::string::String;

use thiserror::Error;

/// Errors raised by the protocol core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Input data or parameters do not match the expected shape or domain.
    #[error("rejected input: {0}")]
    Input(String),

    /// A participant violated the round protocol (unknown id, missing share, too few reports).
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Invalid hyperparameters or experiment settings.
    #[error("config error: {0}")]
    Config(String),

    /// An order-based aggregator was combined with sum-only masking.
    #[error("incompatible configuration: {aggregation} aggregation cannot run with {privacy} privacy")]
    Incompatible {
        aggregation: &'static str,
        privacy: &'static str,
    },

    /// Malformed wire bytes.
    #[error("decode error at byte {offset}: {reason}")]
    Decode { offset: usize, reason: &'static str },
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn protocol(msg: impl Into<String>) -> Self {
        Error::Protocol(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for configuration-class failures (bad settings or incompatible pairs).
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Incompatible { .. })
    }
}

pub type Result<T> = core::result::Result<T, Error>;
