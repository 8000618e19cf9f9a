use thiserror::Error;

/// Errors produced anywhere in the estimation and forecasting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("series is degenerate: all {0} values are equal")]
    DegenerateSeries(usize),

    #[error("value {value} encodes to index {index}, outside [0, {max}]")]
    OutOfRange { value: f64, index: i64, max: u32 },

    #[error("iterate diverged at step {step}")]
    Divergence { step: usize },

    #[error("remote provider unavailable: {0}")]
    RemoteUnavailable(String),

    #[error("malformed context: {0}")]
    MalformedContext(String),

    #[error("state {0} has an all-zero transition row")]
    UnknownState(u32),

    #[error("trajectory is empty")]
    EmptyTrajectory,

    #[error("no filled rows to impute from")]
    NoFilledRows,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("numerical underflow in {0}")]
    NumericalUnderflow(&'static str),

    #[error("chain is periodic or reducible (spectral gap 0)")]
    PeriodicOrReducible,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed kernel file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable tag for error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DegenerateSeries(_) => "DegenerateSeries",
            Error::OutOfRange { .. } => "OutOfRange",
            Error::Divergence { .. } => "Divergence",
            Error::RemoteUnavailable(_) => "RemoteUnavailable",
            Error::MalformedContext(_) => "MalformedContext",
            Error::UnknownState(_) => "UnknownState",
            Error::EmptyTrajectory => "EmptyTrajectory",
            Error::NoFilledRows => "NoFilledRows",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::NumericalUnderflow(_) => "NumericalUnderflow",
            Error::PeriodicOrReducible => "PeriodicOrReducible",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::Config(_) => "Config",
            Error::Format(_) => "Format",
            Error::Io(_) => "Io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
