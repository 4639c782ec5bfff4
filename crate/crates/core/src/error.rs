use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Error type shared by all simulation modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input for {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("time {t} outside schedule of duration {duration}")]
    OutOfSchedule { t: f64, duration: f64 },

    #[error("wavefunctions live on different grids")]
    GridMismatch,

    #[error("tweezers too close to partition ports (separation {separation}, waist {waist})")]
    TweezersTooClose { separation: f64, waist: f64 },

    #[error("two-level subspace not isolated: {0}")]
    SubspaceNotIsolated(String),

    #[error("eigensolver failure: {0}")]
    Eigensolver(String),

    #[error("grid overflow: boundary density {density:.3e} at t = {t}")]
    GridOverflow { t: f64, density: f64 },

    #[error("point inside source mass (r = {0})")]
    InsideMass(f64),

    #[error("fit failure: {0}")]
    Fit(String),

    #[error("persistence failure: {0}")]
    Persistence(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("reproducibility failure: hash mismatch for {0}")]
    HashMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// Process exit code category for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidParameter(_) | Error::NonFinite(_) => 2,
            Error::GridOverflow { .. } => 3,
            Error::Persistence(_) | Error::Io(_) => 4,
            Error::HashMismatch(_) => 5,
            _ => 1,
        }
    }
}
