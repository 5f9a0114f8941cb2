use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad class of a failure, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Bad input data, configuration or schema.
    Input,
    /// A numerical step (factorization, standardization) could not be carried out.
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("input is empty")]
    EmptyInput,

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("non-numeric cell {value:?} in column `{column}` (data row {row})")]
    NonNumericCell {
        column: String,
        row: usize,
        value: String,
    },

    #[error("missing value in column `{column}` (data row {row})")]
    MissingValue { column: String, row: usize },

    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("unknown group label `{0}`")]
    UnknownGroup(String),

    #[error("rank-deficient design: {0}")]
    RankDeficient(String),

    #[error("singular design for pair ({0}, {1})")]
    SingularDesign(usize, usize),

    #[error("degenerate scale for pair ({0}, {1}): all scores tied")]
    DegenerateScale(usize, usize),

    #[error("nonpositive scale estimate {0}")]
    NonPositiveScale(f64),

    #[error("score function produced a non-finite value at u = {0}")]
    NonFiniteScore(f64),

    #[error("correlation matrix is not positive semidefinite (smallest eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("zero denominator in degrees-of-freedom computation")]
    ZeroDenominator,

    #[error("{0}")]
    Numerical(String),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::RankDeficient(_)
            | Error::SingularDesign(..)
            | Error::DegenerateScale(..)
            | Error::NonPositiveScale(_)
            | Error::NonFiniteScore(_)
            | Error::NotPsd(_)
            | Error::ZeroDenominator
            | Error::Numerical(_) => ErrorCategory::Numerical,
            _ => ErrorCategory::Input,
        }
    }

    /// Stable machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyInput => "empty_input",
            Error::MissingColumn(_) => "missing_column",
            Error::NonNumericCell { .. } => "non_numeric_cell",
            Error::MissingValue { .. } => "missing_value",
            Error::Csv(_) => "malformed_csv",
            Error::Io(_) => "io",
            Error::InvalidDataset(_) => "invalid_dataset",
            Error::InvalidConfig(_) => "invalid_config",
            Error::InvalidScenario(_) => "invalid_scenario",
            Error::UnknownGroup(_) => "unknown_group",
            Error::RankDeficient(_) => "rank_deficient",
            Error::SingularDesign(..) => "singular_design",
            Error::DegenerateScale(..) => "degenerate_scale",
            Error::NonPositiveScale(_) => "nonpositive_scale",
            Error::NonFiniteScore(_) => "non_finite_score",
            Error::NotPsd(_) => "not_psd",
            Error::ZeroDenominator => "zero_denominator",
            Error::Numerical(_) => "numerical",
        }
    }
}
