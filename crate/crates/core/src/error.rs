use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // summaries and matrices
    #[error("embedding matrix has no rows")]
    EmptyMatrix,
    #[error("matrix shape mismatch: expected {expected} values, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("mean vector has non-positive total mass {0}; cannot L1-normalize")]
    NegativeMass(f64),
    #[error("mean component {index} is negative ({value}); probability distances are undefined")]
    NegativeComponent { index: usize, value: f64 },
    #[error("trim fraction {0} outside [0, 0.5)")]
    InvalidTrimFraction(f64),
    #[error("smoothing epsilon must be positive, got {0}")]
    NonPositiveEpsilon(f64),
    #[error("summary vector is not a normalized probability vector")]
    NotNormalized,

    // distances and estimator
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("component {index} is not strictly positive; smooth the input first")]
    NonPositiveComponent { index: usize },
    #[error("duplicate source name `{0}`")]
    DuplicateSourceName(String),
    #[error("profiles come from different extractors (`{0}` vs `{1}`)")]
    MixedExtractors(String, String),
    #[error("no candidate sources")]
    EmptyCandidates,
    #[error("reference source `{0}` is not among the candidates")]
    MissingReference(String),
    #[error("random baseline requires a seed")]
    MissingSeed,
    #[error("profiles built with different or non-mean summarizers cannot be merged")]
    MixedSummarizers,
    #[error("need at least {needed} profiles, got {got}")]
    TooFewProfiles { needed: usize, got: usize },

    // rank statistics and calibration
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("rank correlation needs at least two non-constant values on each side")]
    DegenerateConstantInput,
    #[error("unknown source `{0}`")]
    UnknownSource(String),
    #[error("unknown target `{0}`")]
    UnknownTarget(String),
    #[error("task `{task}` has {count} sources; at least 3 are required")]
    TooFewSources { task: String, count: usize },
    #[error("no improvement record for method `{method}` (source `{source_name}`)")]
    MissingRecord { method: String, source_name: String },
    #[error("performance of method `{0}` is zero; relative gain undefined")]
    ZeroDenominator(String),
    #[error("`{0}` does not appear in the ranking")]
    NotInRanking(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    // file formats and registry
    #[error("bad header: {0}")]
    BadHeader(String),
    #[error("line {line}: expected {expected} values, found {found}")]
    RaggedRow {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: non-finite value")]
    NonFiniteValue { line: usize },
    #[error("line {line}: cannot parse `{token}` as a number")]
    BadValue { line: usize, token: String },
    #[error("bad magic bytes")]
    BadMagic,
    #[error("file is truncated")]
    TruncatedFile,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("profile `{0}` already exists")]
    NameCollision(String),
    #[error("profile `{0}` not found")]
    NotFound(String),
    #[error("invalid profile name `{0}` (allowed: A-Z a-z 0-9 _ -)")]
    InvalidName(String),
    #[error("malformed input: {0}")]
    Malformed(String),

    // oracle
    #[error("bad world spec: {0}")]
    BadSpec(String),
    #[error("unknown domain `{0}`")]
    UnknownName(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code for the command-line surface: 2 input, 3 state, 4 reference.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NameCollision(_) => 3,
            Error::UnknownSource(_)
            | Error::UnknownTarget(_)
            | Error::NotFound(_)
            | Error::MissingReference(_)
            | Error::UnknownName(_)
            | Error::MissingRecord { .. } => 4,
            _ => 2,
        }
    }
}
