use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid basis: {0}")]
    InvalidBasis(String),

    #[error("mode {mode} out of range for a {modes}-mode basis")]
    ModeOutOfRange { mode: usize, modes: usize },

    #[error("operands live on different bases")]
    BasisMismatch,

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("operator is not Hermitian (defect {defect:.3e})")]
    NotHermitian { defect: f64 },

    #[error(
        "integrator could not reach tolerance {tolerance:.1e}: last step {step:.3e}, \
         last change {change:.3e} after {doublings} step halvings"
    )]
    StepUnderflow {
        tolerance: f64,
        step: f64,
        change: f64,
        doublings: u32,
    },

    #[error("{what} = {value:.3e} violates limit {limit:.1e} at t = {time}")]
    InvariantViolated {
        what: &'static str,
        value: f64,
        limit: f64,
        time: f64,
    },

    #[error(
        "population difference never crosses zero before t = {t_end}; use a longer grid"
    )]
    NoZeroCrossing { t_end: f64 },

    #[error("dimension {dim} exceeds the oracle limit of {max}")]
    DimensionTooLarge { dim: usize, max: usize },

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short stable identifier used in machine-readable error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidBasis(_) => "invalid_basis",
            Error::ModeOutOfRange { .. } => "mode_out_of_range",
            Error::BasisMismatch => "basis_mismatch",
            Error::InvalidParams(_) => "invalid_params",
            Error::InvalidGrid(_) => "invalid_grid",
            Error::InvalidState(_) => "invalid_state",
            Error::NotHermitian { .. } => "not_hermitian",
            Error::StepUnderflow { .. } => "step_underflow",
            Error::InvariantViolated { .. } => "invariant_violated",
            Error::NoZeroCrossing { .. } => "no_zero_crossing",
            Error::DimensionTooLarge { .. } => "dimension_too_large",
            Error::Config { .. } => "config",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
