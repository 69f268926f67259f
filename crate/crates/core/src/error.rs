use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid bandwidth {value} for dimension {dim}: {reason}")]
    InvalidBandwidth {
        dim: usize,
        value: usize,
        reason: &'static str,
    },

    #[error("invalid ANOVA term {dims:?}: {reason}")]
    InvalidTerm {
        dims: Vec<usize>,
        reason: &'static str,
    },

    #[error("duplicate ANOVA term {0:?}")]
    DuplicateTerm(Vec<usize>),

    #[error("ANOVA term {0:?} is not part of the index set")]
    UnknownTerm(Vec<usize>),

    #[error("varied bandwidth {requested} exceeds the current bandwidth {current}")]
    OutOfRange { requested: usize, current: usize },

    #[error("index set is not a subset of the base set: {0}")]
    NotSubset(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid sampling data: {0}")]
    InvalidSamples(String),

    #[error("unknown operator backend `{0}`")]
    UnknownBackend(String),

    #[error("operator backend `{0}` is not available in this build")]
    UnavailableBackend(String),

    #[error("cross-validation score undefined: |I| = {cardinality} >= n = {n}")]
    UndefinedScore { cardinality: usize, n: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient data: need at least {needed} values, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("degenerate ANOVA term {0:?}: nothing to allocate")]
    DegenerateTerm(Vec<usize>),

    #[error("allocation infeasible: {0}")]
    Infeasible(String),

    #[error("lambda solver failed: {0}")]
    Solver(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerical machinery, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Solver(_)
                | Error::Infeasible(_)
                | Error::UndefinedScore { .. }
                | Error::Domain(_)
                | Error::InsufficientData { .. }
                | Error::DegenerateTerm(_)
        )
    }
}
