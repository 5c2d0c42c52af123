use std::fmt;
use std::path::Path;

use poqsim_core::record_store::StoreError;

/// Failure classes and their process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    MissingInput,
    Internal,
}

impl ErrorClass {
    pub fn exit_code(self) -> u8 {
        match self {
            ErrorClass::Validation => 2,
            ErrorClass::MissingInput => 3,
            ErrorClass::Internal => 4,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub class: ErrorClass,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            class: ErrorClass::Validation,
            message: message.into(),
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self {
            class: ErrorClass::Internal,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        let class = if err.kind() == std::io::ErrorKind::NotFound {
            ErrorClass::MissingInput
        } else {
            ErrorClass::Internal
        };
        Self {
            class,
            message: format!("{}: {err}", path.display()),
        }
    }

    /// Store errors while reading an input file.
    pub fn reading(path: &Path, err: StoreError) -> Self {
        match err {
            StoreError::Io { path, source } => Self::io(&path, source),
            other => Self::validation(format!("{}: {other}", path.display())),
        }
    }

    /// Store errors while writing an output file.
    pub fn writing(err: StoreError) -> Self {
        Self::internal(err.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}
