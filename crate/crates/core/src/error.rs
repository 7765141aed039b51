use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid bounds [{min}, {max}]: need 0 < min <= max, both finite")]
    InvalidBounds { min: f64, max: f64 },

    #[error("value {value} at index {index} lies outside [{min}, {max}]")]
    OutOfBounds {
        index: usize,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("invalid breakpoints: {0}")]
    InvalidBreakpoints(String),

    #[error("measurement matrix is rank deficient")]
    RankDeficient,

    #[error("objective is singular at this point (factorization pivot below tolerance)")]
    SingularObjective,

    #[error("signal entry {0} is zero")]
    ZeroEntry(usize),

    #[error("signal has {found} jumps but the code allows at most {max}")]
    TooManyJumps { found: usize, max: usize },

    #[error("malformed codeword description: {0}")]
    MalformedCodeword(String),

    #[error("quantizer grid with {bits} bits has no level inside [{min}, {max}]")]
    EmptyGrid { bits: u32, min: f64, max: f64 },

    #[error("bound hypothesis violated: need m < n/4, got m = {m}, n = {n}")]
    HypothesisViolation { m: usize, n: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
