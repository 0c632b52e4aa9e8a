use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("unbound input node {0}")]
    UnboundInput(usize),

    #[error("rung {0} is not on the ladder")]
    OffLadder(String),

    #[error("invalid spec: {0}")]
    Spec(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("training aborted: {0}")]
    Aborted(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Shape(format!($($arg)*))
    };
}

pub(crate) use shape_err;
