use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("encoding error: {0}")]
    Encoding(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("unsupported metric: {0}")]
    UnsupportedMetric(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("training diverged at step {step}: {reason}")]
    Divergence { step: u64, reason: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    #[allow(dead_code)]
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

macro_rules! ensure_dim {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::Dimension(format!($($arg)+)));
        }
    };
}

macro_rules! ensure_domain {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::Domain(format!($($arg)+)));
        }
    };
}

pub(crate) use ensure_dim;
pub(crate) use ensure_domain;
