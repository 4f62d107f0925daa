//! Dataset ingestion, synthetic data and experiment drivers behind the
//! `gbcc` command.

pub mod dataset;
pub mod run;
pub mod synth;

use gbcc::Error;

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parameter(_) => EXIT_CONFIG,
        Error::Ingestion(_) | Error::Format { .. } | Error::Io { .. } | Error::Shape { .. } => EXIT_DATA,
        Error::NonFinite { .. } | Error::DegenerateBatch(_) => EXIT_NUMERIC,
        Error::Contract(_) => EXIT_FAILURE,
    }
}
