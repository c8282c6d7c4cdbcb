use std::fmt::Display;

use aq_core::allocator::AllocError;
use aq_core::calibfile::CalibError;
use aq_core::container::PackError;
use aq_core::fisher::FisherError;
use aq_core::hsic::HsicError;
use aq_core::quantcore::QuantError;
use aq_core::scaleopt::ScaleOptError;
use aq_core::sensitivity::SensitivityError;
use aq_harness::{CheckpointError, HarnessError};

/// Error classes, each with its own process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
    Io,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 10,
            ErrorClass::Data => 11,
            ErrorClass::Numeric => 12,
            ErrorClass::Io => 13,
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage}: {message}")]
pub struct CliError {
    pub class: ErrorClass,
    pub stage: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(class: ErrorClass, stage: &'static str, message: impl Into<String>) -> Self {
        Self { class, stage, message: message.into() }
    }

    pub fn config(stage: &'static str, message: impl Into<String>) -> Self {
        Self::new(ErrorClass::Config, stage, message)
    }

    pub fn data(stage: &'static str, message: impl Into<String>) -> Self {
        Self::new(ErrorClass::Data, stage, message)
    }

    pub fn exit_code(&self) -> i32 {
        self.class.exit_code()
    }
}

/// Maps a module error onto an exit-code class.
pub trait Classify: Display {
    fn class(&self) -> ErrorClass;
}

/// Adapter for `map_err`: tags an error with the stage that produced it.
pub fn at<E: Classify>(stage: &'static str) -> impl Fn(E) -> CliError {
    move |e| CliError::new(e.class(), stage, e.to_string())
}

impl Classify for std::io::Error {
    fn class(&self) -> ErrorClass {
        ErrorClass::Io
    }
}

impl Classify for serde_json::Error {
    fn class(&self) -> ErrorClass {
        if self.is_io() {
            ErrorClass::Io
        } else {
            ErrorClass::Data
        }
    }
}

impl Classify for QuantError {
    fn class(&self) -> ErrorClass {
        match self {
            QuantError::InvalidBitWidth(_) | QuantError::InvalidBlockSize(_) => ErrorClass::Config,
            QuantError::NonFinite { .. } => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }
}

impl Classify for FisherError {
    fn class(&self) -> ErrorClass {
        match self {
            FisherError::InvalidAlpha(_) => ErrorClass::Config,
            FisherError::NonFinite { .. } => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }
}

impl Classify for HsicError {
    fn class(&self) -> ErrorClass {
        match self {
            HsicError::InvalidBandwidth(_) => ErrorClass::Config,
            HsicError::NonFinite(_) | HsicError::Degenerate => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }
}

impl Classify for SensitivityError {
    fn class(&self) -> ErrorClass {
        match self {
            SensitivityError::Config(_) => ErrorClass::Config,
            SensitivityError::Hsic(e) => e.class(),
            _ => ErrorClass::Data,
        }
    }
}

impl Classify for ScaleOptError {
    fn class(&self) -> ErrorClass {
        match self {
            ScaleOptError::Config(_) => ErrorClass::Config,
            ScaleOptError::BadImportance(_) => ErrorClass::Numeric,
            ScaleOptError::Quant(e) => e.class(),
            ScaleOptError::Fisher(e) => e.class(),
            ScaleOptError::Alignment { .. } => ErrorClass::Data,
        }
    }
}

impl Classify for AllocError {
    fn class(&self) -> ErrorClass {
        match self {
            AllocError::EmptyMenu
            | AllocError::UnsortedMenu
            | AllocError::Infeasible { .. }
            | AllocError::TooLarge(_) => ErrorClass::Config,
            _ => ErrorClass::Data,
        }
    }
}

impl Classify for CalibError {
    fn class(&self) -> ErrorClass {
        match self {
            CalibError::Io(_) => ErrorClass::Io,
            CalibError::NonFinite { .. } => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }
}

impl Classify for PackError {
    fn class(&self) -> ErrorClass {
        match self {
            PackError::InvalidTensor { source, .. } => match source.class() {
                ErrorClass::Numeric => ErrorClass::Numeric,
                _ => ErrorClass::Data,
            },
            _ => ErrorClass::Data,
        }
    }
}

impl Classify for HarnessError {
    fn class(&self) -> ErrorClass {
        match self {
            HarnessError::Config(_) => ErrorClass::Config,
            HarnessError::NonFinite(_) | HarnessError::Divergence { .. } => ErrorClass::Numeric,
            HarnessError::Io(_) | HarnessError::Checkpoint(CheckpointError::Io(_)) => ErrorClass::Io,
            HarnessError::Csv(e) if e.is_io_error() => ErrorClass::Io,
            HarnessError::Quant(e) => e.class(),
            HarnessError::Calib(e) => e.class(),
            HarnessError::Sensitivity(e) => e.class(),
            HarnessError::Alloc(e) => e.class(),
            HarnessError::ScaleOpt(e) => e.class(),
            HarnessError::Fisher(e) => e.class(),
            _ => ErrorClass::Data,
        }
    }
}
