use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report.
///
/// Numeric failures (`NonFinite`, `NoContraction`, ...) are distinguished from
/// configuration problems so the CLI can map them to separate exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("integral did not converge (partial value {partial})")]
    NonFinite { partial: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("grid too coarse: spacing {h} exceeds kernel width sqrt(t) = {sqrt_t}")]
    GridTooCoarse { h: f64, sqrt_t: f64 },

    #[error("Picard iteration failed to contract on a subinterval of length {interval}")]
    NoContraction { interval: f64 },

    #[error("no tested lambda reached grad_sup <= 1/2")]
    NotReached { table: Vec<(f64, f64)> },

    #[error("limit estimate inconclusive: {0}")]
    InconclusiveLimit(String),

    #[error("fixed-point inversion did not converge (stale gradient bound?)")]
    NoConvergence,

    #[error("drift has no gradient or divergence available: {0}")]
    SmoothnessRequired(String),

    #[error("ensemble is missing the {0} array")]
    MissingArray(&'static str),

    #[error("modulus is not Dini: partial integrals keep growing ({partial})")]
    NotDini { partial: f64 },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("failed to parse config: {0}")]
    Parse(String),

    #[error("invalid value for `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code for this error class: 2 config, 3 numeric, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse(_) | Error::Validation { .. } => 2,
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => 4,
            _ => 3,
        }
    }
}
