use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("field `{0}` not found")]
    MissingField(String),
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("model not identifiable: {0}")]
    NonIdentifiable(String),
    #[error("row {row} of the Q matrix sums to zero")]
    ZeroRow { row: usize },
    #[error("block too large for exact enumeration ({n_a}x{n_b}, limit 4x5)")]
    BlockTooLarge { n_a: usize, n_b: usize },
    #[error("bisection failed to bracket target {target} (V in [{v_min}, {v_max}])")]
    Bracketing { target: f64, v_min: f64, v_max: f64 },
    #[error("too few valid replicates: {valid} (need {needed})")]
    TooFewReplicates { valid: usize, needed: usize },
    #[error("method `{0}` is not available for this scenario")]
    IncompatibleMethod(String),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
