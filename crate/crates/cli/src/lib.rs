//! Command-line front end: JSON run configs with flag overrides, CVOL I/O,
//! reports and maps.

pub mod args;
pub mod commands;
pub mod config;
pub mod output;
pub mod validate;

use std::fmt;

use gsvs::GsvsError;

pub use args::{Cli, Command};

/// Failure with its process exit code.
#[derive(Debug)]
pub enum Failure {
    /// Computation failed (1).
    Compute(String),
    /// Bad arguments or unreadable/unwritable files (2).
    Usage(String),
    /// A validation threshold was not met (3).
    Validation(String),
    /// Malformed header, descriptor or config (4).
    Format(String),
    /// Inconsistent shapes between inputs (5).
    Dimension(String),
    /// Interleaved processing without a schedule (6).
    Schedule(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Compute(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Validation(_) => 3,
            Failure::Format(_) => 4,
            Failure::Dimension(_) => 5,
            Failure::Schedule(_) => 6,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Failure::Usage(msg.into())
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (kind, msg) = match self {
            Failure::Compute(m) => ("computation failed", m),
            Failure::Usage(m) => ("usage", m),
            Failure::Validation(m) => ("validation failed", m),
            Failure::Format(m) => ("format", m),
            Failure::Dimension(m) => ("dimension mismatch", m),
            Failure::Schedule(m) => ("missing schedule", m),
        };
        write!(f, "{kind}: {msg}")
    }
}

impl std::error::Error for Failure {}

impl From<GsvsError> for Failure {
    fn from(e: GsvsError) -> Self {
        let msg = e.to_string();
        match e {
            GsvsError::InvalidArgument(_) | GsvsError::Io(_) => Failure::Usage(msg),
            GsvsError::Format(_) | GsvsError::Json(_) => Failure::Format(msg),
            GsvsError::DimensionMismatch(_) => Failure::Dimension(msg),
            GsvsError::MissingSchedule(_) => Failure::Schedule(msg),
            _ => Failure::Compute(msg),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Denoise(a) => commands::denoise::run(a),
        Command::EstimateGamma(a) => commands::gamma::run(a),
        Command::Simulate(a) => commands::simulate::run(a),
        Command::ValidateNoise(a) => commands::validate::run(a),
        Command::Esd(a) => commands::esd::run(a),
    }
}
