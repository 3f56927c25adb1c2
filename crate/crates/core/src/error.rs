//! Error type shared across the toolkit.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("dataset contains only one label; both bona fide and attack samples are required")]
    SingleLabel,

    #[error("dataset mixes groups where a single group is required")]
    MixedGroups,

    #[error("activation cache does not match the model it was passed with")]
    CacheMismatch,

    #[error("pixel ranking is not a permutation of 0..{expected}")]
    InvalidRanking { expected: usize },

    #[error("fraction {0} is outside [0, 1]")]
    FractionOutOfRange(f64),

    #[error("curves are not comparable: {0}")]
    CurveMismatch(String),

    #[error("curve needs at least two points")]
    CurveTooShort,

    #[error("non-finite value produced in {0}")]
    NonFinite(&'static str),

    #[error("unrecognized format: bad magic bytes")]
    BadMagic,

    #[error("unsupported format version {0}")]
    BadVersion(u16),

    #[error("file truncated or corrupt: {0}")]
    Corrupt(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
