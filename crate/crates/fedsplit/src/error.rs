use crate::quantizer::codec::CodecError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A configuration or argument is outside its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A step-weight or contraction schedule fails its gate.
    #[error("schedule validation failed: {0}")]
    Schedule(String),

    /// A runtime protocol invariant was broken.
    #[error("protocol integrity violation: {0}")]
    Integrity(String),

    #[error("operating-ball violation: {0}")]
    OperatingBall(String),

    #[error("bit-budget violation: {0}")]
    BitBudget(String),

    #[error("degenerate witness: {0}")]
    DegenerateWitness(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Codec(#[from] CodecError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors that reject a configuration before anything runs.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter(_) | Error::Schedule(_) | Error::BitBudget(_) | Error::Json(_)
        )
    }
}
