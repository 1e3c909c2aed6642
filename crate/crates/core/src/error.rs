use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{op}: empty input")]
    EmptyInput { op: &'static str },
    #[error("backward: loss must be 1x1, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("backward: tape is empty")]
    EmptyTape,
    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("link_rate: distance must be positive, got {0}")]
    NonPositiveDistance(f64),
    #[error("environment has not been reset")]
    NotReset,
    #[error("episode finished after {0} slots; call reset")]
    EpisodeFinished(usize),
    #[error("invalid joint action: {0}")]
    InvalidAction(String),
    #[error("exhaustive search would evaluate {count} joint actions, cap is {cap}")]
    EnumerationCap { count: f64, cap: u64 },
    #[error("table: {0}")]
    Table(String),
    #[error("experiment cell {cell} failed: {reason}")]
    Cell { cell: String, reason: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field,
            reason: reason.into(),
        }
    }
}
