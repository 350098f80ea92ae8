use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("timestep {t} out of range 1..={max}")]
    TimestepOutOfRange { t: usize, max: usize },

    #[error("unknown condition label `{0}`")]
    UnknownCondition(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("division by zero: {0}")]
    DivisionByZero(String),

    #[error("incompatible latent code: {0}")]
    IncompatibleLatent(String),

    #[error("invalid edit: {0}")]
    InvalidEdit(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("latent file format error: {0}")]
    Format(String),

    #[error("latent file is corrupt: {0}")]
    Corrupt(String),

    #[error("numerical failure in {experiment} at t={t}: {detail}")]
    Numerical {
        experiment: String,
        t: usize,
        detail: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Process exit status the CLI reports for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite { .. } | Error::NotSpd(_) | Error::Numerical { .. } => 3,
            Error::DivisionByZero(_) => 3,
            Error::Io(_) | Error::Csv(_) => 1,
            _ => 2,
        }
    }
}
