use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid spectral covariance: {0}")]
    InvalidSpectrum(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("inconsistent cavity geometry: escape efficiency {escape_efficiency:.4} exceeds 1 (coupler transmission {transmission} vs total loss 2π/F = {total_loss:.5})")]
    InconsistentGeometry {
        escape_efficiency: f64,
        transmission: f64,
        total_loss: f64,
    },

    #[error("pump power {pump_mw} mW is at or above threshold {threshold_mw} mW; model is only valid below threshold")]
    AboveThreshold { pump_mw: f64, threshold_mw: f64 },

    #[error("ill-conditioned cavity response (condition number {0:.3e})")]
    IllConditioned(f64),

    #[error("invalid mode index {0}; expected 1 or 2")]
    InvalidMode(u8),

    #[error("unknown element `{0}`")]
    UnknownElement(String),

    #[error("simulation configuration: {0}")]
    Simulation(String),

    #[error("series too short: {have} samples, need at least {need}")]
    SeriesTooShort { have: usize, need: usize },

    #[error("config line {line}: {message}")]
    ConfigSyntax { line: usize, message: String },

    #[error("config `{key}`: {message}")]
    ConfigValue { key: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::ConfigValue {
            key: key.into(),
            message: message.into(),
        }
    }

    /// True for errors that originate in user-supplied configuration.
    pub fn is_config(&self) -> bool {
        !matches!(self, Error::Io { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
