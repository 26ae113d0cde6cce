use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("negative mass {value} at position {index}")]
    NegativeMass { index: usize, value: f64 },

    #[error("mass sums to {sum}, not 1")]
    NotNormalized { sum: f64 },

    #[error("invalid category index {index} for a scheme with {len} categories")]
    InvalidCategory { index: usize, len: usize },

    #[error("year {0} is outside the category scheme")]
    YearOutOfScheme(i64),

    #[error("invalid age group: {0}")]
    InvalidAgeGroup(String),

    #[error("degenerate stratum: {0}")]
    DegenerateStratum(String),

    #[error("inconsistent drug-use history: {0}")]
    InconsistentHistory(String),

    #[error("empty feasible window: {0}")]
    EmptyWindow(String),

    #[error("missing bias term {0} required by a biased observation")]
    MissingBiasKey(String),

    #[error("bias keys do not match the bias structure: {0}")]
    BiasKeyMismatch(String),

    #[error("target cannot be resolved: {0}")]
    UnresolvableTarget(String),

    #[error("level-adjusted estimate {0} exceeds 1")]
    MultiplierExceedsOne(f64),

    #[error("line {line}: {message}")]
    InvalidRecord { line: usize, message: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("unidentifiable configuration: no unbiased information for {}", .0.join(", "))]
    Identifiability(Vec<String>),

    #[error("observation {0} is impossible under the model (zero predicted probability)")]
    ImpossibleData(String),

    #[error("indeterminate diagnostic: {0}")]
    Indeterminate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
