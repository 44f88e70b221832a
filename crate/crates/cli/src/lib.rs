//! Operator surface: dataset generation, training, sampling, benchmarking
//! and gradient verification.

pub mod commands;
pub mod config;

pub use commands::{cmd_bench, cmd_gen_data, cmd_gradcheck, cmd_sample, cmd_train};
pub use config::RunConfig;

use ssmvdm_core::Error;

/// Environment variable capping the worker-thread count.
pub const THREADS_ENV: &str = "SSMVDM_THREADS";

pub const EXIT_OK: u8 = 0;
/// I/O and other runtime failures.
pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_CAPACITY: u8 = 4;
/// At least one gradient check failed.
pub const EXIT_GRADCHECK: u8 = 5;

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::OutOfRange { .. } => EXIT_CONFIG,
        Error::Data(_)
        | Error::BadMagic { .. }
        | Error::UnsupportedVersion { .. }
        | Error::Truncated { .. }
        | Error::Malformed { .. }
        | Error::ValueOutOfRange { .. } => EXIT_DATA,
        Error::Capacity { .. } => EXIT_CAPACITY,
        _ => EXIT_RUNTIME,
    }
}

/// Parses a thread cap; `None` when unset.
pub fn thread_cap(value: Option<&str>) -> Result<Option<usize>, Error> {
    match value {
        None => Ok(None),
        Some(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::config(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        },
    }
}
