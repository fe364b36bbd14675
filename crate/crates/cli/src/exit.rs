//! Process exit codes:
//!
//! | code | meaning                                            |
//! |------|----------------------------------------------------|
//! | 0    | success                                            |
//! | 1    | any other failure                                  |
//! | 2    | invalid config, arguments or dataset contents      |
//! | 3    | non-finite loss during training                    |
//! | 4    | I/O failure: missing, unreadable or corrupt files  |

use msclr::config::ConfigError;
use msclr::dataio::DataError;
use msclr::evalkit::EvalError;
use msclr::pretrain::PretrainError;

pub const OTHER: u8 = 1;
pub const INVALID: u8 = 2;
pub const NON_FINITE: u8 = 3;
pub const IO: u8 = 4;

/// Raised by commands for usage and validation failures.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct Invalid(pub String);

fn data(e: &DataError) -> u8 {
    match e {
        DataError::Io { .. }
        | DataError::MissingFile(_)
        | DataError::Truncated { .. }
        | DataError::MalformedHeader { .. }
        | DataError::DimensionMismatch { .. }
        | DataError::UnknownConvention { .. }
        | DataError::Manifest { .. } => IO,
        _ => INVALID,
    }
}

fn pretrain(e: &PretrainError) -> u8 {
    match e {
        PretrainError::NonFiniteLoss { .. } => NON_FINITE,
        PretrainError::Io { .. } | PretrainError::Checkpoint { .. } => IO,
        PretrainError::Data(d) => data(d),
        PretrainError::Network(_) | PretrainError::Graph(_) => OTHER,
        _ => INVALID,
    }
}

fn eval(e: &EvalError) -> u8 {
    match e {
        EvalError::Data(d) => data(d),
        EvalError::Network(_) | EvalError::Graph(_) => OTHER,
        _ => INVALID,
    }
}

pub fn code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Invalid>() || cause.is::<ConfigError>() {
            return INVALID;
        }
        if let Some(e) = cause.downcast_ref::<PretrainError>() {
            return pretrain(e);
        }
        if let Some(e) = cause.downcast_ref::<EvalError>() {
            return eval(e);
        }
        if let Some(e) = cause.downcast_ref::<DataError>() {
            return data(e);
        }
        if cause.is::<std::io::Error>() {
            return IO;
        }
    }
    OTHER
}
