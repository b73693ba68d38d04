use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("reward not admissible: sup|r| + noise = {bound} exceeds 1")]
    RewardNotAdmissible { bound: f64 },

    #[error("basis too large: {m} features exceeds cap {cap}")]
    BasisTooLarge { m: usize, cap: usize },

    #[error("discretization order {0} outside supported range 2..=8")]
    UnsupportedOrder(usize),

    #[error("trajectory too short: {observations} observations, need at least {needed}")]
    TrajectoryTooShort { observations: usize, needed: usize },

    #[error("trajectory has no inner states; simulate with keep_inner")]
    MissingInnerStates,

    #[error("ill-conditioned system: condition estimate {condition:.3e} exceeds {limit:.1e}")]
    IllConditioned { condition: f64, limit: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("model has no closed-form spectrum")]
    NoSpectrum,

    #[error("insufficient windows: {available} available, need {needed}")]
    InsufficientWindows { available: usize, needed: usize },

    #[error("action outside the action box")]
    ActionOutOfBounds,

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
