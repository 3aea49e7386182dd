use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("mode {mode} out of range for a {order}-way tensor")]
    ModeOutOfRange { mode: usize, order: usize },

    #[error("index {index:?} out of range for shape {shape:?}")]
    IndexOutOfRange {
        index: Vec<usize>,
        shape: Vec<usize>,
    },

    #[error("invalid permutation {0:?}")]
    InvalidPermutation(Vec<usize>),

    #[error("rank mismatch between core {core} and core {next}: {left} != {right}")]
    RankMismatch {
        core: usize,
        next: usize,
        left: usize,
        right: usize,
    },

    #[error("border TT-rank must be 1, got {0}")]
    BorderRank(usize),

    #[error("invalid rank chain: {0}")]
    InvalidRanks(String),

    #[error("materializing {requested} elements exceeds the cap of {cap}")]
    TooLarge { requested: usize, cap: usize },

    #[error("weight tensor entries must be 0 or 1, found {0}")]
    InvalidWeight(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("objective became non-finite at iteration {iteration}")]
    Diverged {
        iteration: usize,
        trace: Box<crate::wopt::OptimizerTrace>,
    },

    #[error("gradient is identically zero at the initial cores")]
    ZeroGradient,

    #[error("reference tensor has zero norm")]
    ZeroNorm,

    #[error("spatial dims {h}x{w} are not an equal power of two")]
    NotPowerOfTwo { h: usize, w: usize },

    #[error("bad magic in {0}")]
    BadMagic(PathBuf),

    #[error("truncated payload in {path}: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value at flat offset {0}")]
    NonFinite(usize),

    #[error("unsupported PPM: {0}")]
    UnsupportedPpm(String),

    #[error("config parse error on line {line}: {msg}")]
    ConfigParse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
