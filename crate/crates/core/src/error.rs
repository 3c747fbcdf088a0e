use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid tensor shape: {0}")]
    InvalidShape(String),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("rank mismatch: expected {expected}, found {found}")]
    RankMismatch { expected: usize, found: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("mode {mode} out of range for an order-{order} tensor")]
    ModeOutOfRange { mode: usize, order: usize },

    #[error("dimension tree expected mode {expected}, got mode {requested}")]
    OutOfOrderMode { expected: usize, requested: usize },

    #[error("stale dimension-tree cache: {0}")]
    StaleCache(String),

    #[error("block principal pivoting did not converge for column {column} after {iterations} iterations")]
    BppCycling { column: usize, iterations: usize },

    #[error("NNLS update failed in mode {mode} at outer iteration {iteration}: {source}")]
    UpdateFailed {
        mode: usize,
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("relative error undefined for a zero tensor")]
    ZeroTensor,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("grid error: {0}")]
    Grid(String),

    #[error("communication failure: {0}")]
    Comm(String),

    #[error("unknown timing category `{0}`")]
    UnknownCategory(String),

    #[error("tensor of {elems} elements exceeds the memory budget of {budget} elements")]
    MemoryBudget { elems: u128, budget: usize },

    #[error("bad magic in tensor file")]
    BadMagic,

    #[error("unsupported tensor file version {0}")]
    UnsupportedVersion(u16),

    #[error("truncated tensor file: {0}")]
    Truncated(String),

    #[error("payload mismatch: header declares {expected} values, payload holds {found}")]
    PayloadMismatch { expected: u128, found: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
