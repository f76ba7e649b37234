//! Error type shared by all modules of the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid fit parameters: {0}")]
    InvalidFitParams(String),

    #[error("invalid tap set: {0}")]
    InvalidTaps(String),

    #[error("time must be non-negative, got t = {0}")]
    NegativeTime(f64),

    #[error("time must be strictly positive for the fitted response, got t = {0}")]
    NonPositiveTime(f64),

    #[error("malformed CDF: decreases by {decrease:e} between t = {t0} and t = {t1}")]
    MalformedCdf { t0: f64, t1: f64, decrease: f64 },

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("bin width {bin_width} is not an integer multiple of dt = {dt}")]
    MisalignedBinning { bin_width: f64, dt: f64 },

    #[error(
        "fit did not converge after {iterations} iterations \
         (best residual norm {residual:e}, coefficients {coeffs:?})"
    )]
    FitDidNotConverge {
        iterations: usize,
        residual: f64,
        coeffs: [f64; 3],
    },

    #[error("not enough data points to fit: got {got}, need at least {need}")]
    TooFewPoints { got: usize, need: usize },

    #[error("interpolation query outside the table grid: {0}")]
    OutsideGrid(String),

    #[error("interpolation table is not a complete rectilinear grid: {0}")]
    IncompleteGrid(String),

    #[error("empty histogram")]
    EmptyHistogram,

    #[error("index {index} out of range ({what} count is {count})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        count: usize,
    },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("invalid bit value {value} at position {position} (bits must be 0 or 1)")]
    InvalidBit { value: u8, position: usize },

    #[error("invalid symbol {value} at position {position} (symbols must be 0 or {molecules})")]
    InvalidSymbol {
        value: u64,
        position: usize,
        molecules: u64,
    },

    #[error("sequence of {len} slots is too long for exhaustive search (limit {max})")]
    BruteForceTooLong { len: usize, max: usize },

    #[error("joint two-slot detection requires an even slot count, got {0}")]
    OddSlotCount(usize),

    #[error("invalid experiment configuration: {0}")]
    InvalidConfig(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}
