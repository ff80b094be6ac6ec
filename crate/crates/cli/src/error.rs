use std::fmt;

use lgcd_core::Error;

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
/// The dataset, checkpoint or an input image is missing or unreadable.
pub const EXIT_MISSING_DATA: i32 = 3;
pub const EXIT_UNKNOWN_TOKEN: i32 = 4;

/// An error with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub msg: String,
}

impl CliError {
    pub fn new(code: i32, msg: impl Into<String>) -> Self {
        Self { code, msg: msg.into() }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Self::new(EXIT_CONFIG, msg)
    }

    /// Input-reading failures become [`EXIT_MISSING_DATA`] unless they are
    /// configuration or vocabulary problems.
    pub fn input(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::UnknownToken { .. } => e.into(),
            other => Self::new(EXIT_MISSING_DATA, other.to_string()),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => EXIT_CONFIG,
            Error::UnknownToken { .. } => EXIT_UNKNOWN_TOKEN,
            _ => EXIT_FAILURE,
        };
        Self::new(code, e.to_string())
    }
}

impl From<lgcd_tensor::TensorError> for CliError {
    fn from(e: lgcd_tensor::TensorError) -> Self {
        Error::from(e).into()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl std::error::Error for CliError {}
