//! Error type shared across the crate.

use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("column `{name}` not found in header")]
    MissingColumn { name: String },

    #[error("row {row}: column `{column}` is not a finite number (`{value}`)")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("dataset contains no data rows")]
    EmptyDataset,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("instrument has zero variance{}", stratum.map(|s| format!(" in stratum {s}")).unwrap_or_default())]
    DegenerateInstrument { stratum: Option<usize> },

    #[error("instrument-exposure association is exactly zero in stratum {stratum}")]
    ZeroInstrumentAssociation { stratum: usize },

    #[error("weight-function denominator covariance is exactly zero in stratum {stratum}")]
    ZeroDenominator { stratum: usize },

    #[error("transform domain violation: {0}")]
    TransformDomain(String),

    #[error("stratum {stratum} has only {size} members (need at least 2)")]
    StratumTooSmall { stratum: usize, size: usize },

    #[error("singular normal matrix (condition estimate {condition:.3e})")]
    Singular { condition: f64 },

    #[error("no usable penalty candidate: {0}")]
    GcvDegenerate(String),

    #[error("did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },
}

impl Error {
    /// Process exit code for the CLI: 2 input error, 3 numerical failure,
    /// 4 non-convergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::Csv { .. }
            | Error::MissingColumn { .. }
            | Error::NonNumeric { .. }
            | Error::EmptyDataset
            | Error::InvalidConfig(_)
            | Error::InvalidArgument(_) => 2,
            Error::NonConvergence { .. } => 4,
            _ => 3,
        }
    }

    /// Stable machine-readable tag for error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Csv { .. } => "csv",
            Error::MissingColumn { .. } => "missing_column",
            Error::NonNumeric { .. } => "non_numeric",
            Error::EmptyDataset => "empty_dataset",
            Error::InvalidConfig(_) => "invalid_config",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::DegenerateInstrument { .. } => "degenerate_instrument",
            Error::ZeroInstrumentAssociation { .. } => "zero_instrument_association",
            Error::ZeroDenominator { .. } => "zero_denominator",
            Error::TransformDomain(_) => "transform_domain",
            Error::StratumTooSmall { .. } => "stratum_too_small",
            Error::Singular { .. } => "singular",
            Error::GcvDegenerate(_) => "gcv_degenerate",
            Error::NonConvergence { .. } => "non_convergence",
        }
    }
}
