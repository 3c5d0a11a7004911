use thiserror::Error;

/// Errors raised anywhere in the inference pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("duplicate unit id `{0}`")]
    DuplicateId(String),
    #[error("unit `{id}` has treatment value {value}; expected 0 or 1")]
    NonBinaryTreatment { id: String, value: i64 },
    #[error("unit `{0}` has no block label while other units do")]
    MissingBlock(String),
    #[error("block `{0}` needs at least one treated and one control unit")]
    DegenerateBlock(String),
    #[error("unit `{0}` has a non-finite outcome")]
    NonFiniteOutcome(String),
    #[error("degenerate design: {0}")]
    DegenerateDesign(String),
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("assignment leaves the treated or control arm empty")]
    EmptyArm,
    #[error("each arm needs at least two units for a studentized statistic")]
    ArmTooSmall,
    #[error("studentized statistic undefined: both arms have zero variance")]
    ZeroVariance,
    #[error("subset size {size} outside 2..={n}")]
    SubsetSizeOutOfRange { size: usize, n: usize },
    #[error("{size} assignments exceed the enumeration cap of {cap}; use Monte Carlo mode")]
    EnumerationTooLarge { size: u128, cap: u128 },
    #[error("statistic `{0}` is not effect-increasing; bounded-null inference requires an effect-increasing statistic")]
    NonEIStatistic(String),
    #[error("p-value decreased from {p_lo} at {tau_lo} to {p_hi} at {tau_hi}")]
    NonMonotonePValue {
        tau_lo: f64,
        p_lo: f64,
        tau_hi: f64,
        p_hi: f64,
    },
    #[error("no shift in the search range escapes rejection")]
    EmptyConfidenceSet,
    #[error("problem too large for the brute-force oracle: {0}")]
    TooLargeForOracle(String),
    #[error("degenerate scenario: {0}")]
    DegenerateScenario(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

impl Error {
    /// True for problems with the supplied data rather than with the computation.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::DuplicateId(_)
                | Error::NonBinaryTreatment { .. }
                | Error::MissingBlock(_)
                | Error::DegenerateBlock(_)
                | Error::NonFiniteOutcome(_)
                | Error::DegenerateDesign(_)
                | Error::LengthMismatch { .. }
        )
    }

    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DuplicateId(_) => "DuplicateId",
            Error::NonBinaryTreatment { .. } => "NonBinaryTreatment",
            Error::MissingBlock(_) => "MissingBlock",
            Error::DegenerateBlock(_) => "DegenerateBlock",
            Error::NonFiniteOutcome(_) => "NonFiniteOutcome",
            Error::DegenerateDesign(_) => "DegenerateDesign",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::EmptyArm => "EmptyArm",
            Error::ArmTooSmall => "ArmTooSmall",
            Error::ZeroVariance => "ZeroVariance",
            Error::SubsetSizeOutOfRange { .. } => "SubsetSizeOutOfRange",
            Error::EnumerationTooLarge { .. } => "EnumerationTooLarge",
            Error::NonEIStatistic(_) => "NonEIStatistic",
            Error::NonMonotonePValue { .. } => "NonMonotonePValue",
            Error::EmptyConfidenceSet => "EmptyConfidenceSet",
            Error::TooLargeForOracle(_) => "TooLargeForOracle",
            Error::DegenerateScenario(_) => "DegenerateScenario",
            Error::InvalidParameter(_) => "InvalidParameter",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
