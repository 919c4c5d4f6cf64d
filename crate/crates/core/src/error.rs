use thiserror::Error;

pub type Result<T, E = CdpaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CdpaError {
    #[error("non-finite entry at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("bad dimensions: {0}")]
    BadDimensions(String),

    #[error("soft-threshold denominator n*p - n*r - p*r is {denominator} (must be positive)")]
    DegenerateThreshold { denominator: i64 },

    #[error("rank {rank} exceeds min(n, p) = {max}")]
    RankTooLarge { rank: usize, max: usize },

    #[error("signal estimate is identically zero")]
    ZeroSignal,

    #[error("too few samples for rank selection: {0}")]
    TooFewSamples(String),

    #[error("rank deficiency: {0}")]
    RankDeficiency(String),

    #[error("mixing channel is rank deficient (smallest/largest singular value ratio {ratio:e})")]
    ChannelRankDeficient { ratio: f64 },

    #[error("exhaustive matching limited to p <= {max}, got {p}")]
    TooLarge { p: usize, max: usize },

    #[error("bad configuration: {0}")]
    BadConfig(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CdpaError {
    /// True for failures caused by malformed input or configuration, as
    /// opposed to numerical breakdown of the pipeline.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            CdpaError::NonFinite { .. }
                | CdpaError::BadDimensions(_)
                | CdpaError::BadConfig(_)
                | CdpaError::Parse { .. }
                | CdpaError::Io(_)
                | CdpaError::Json(_)
                | CdpaError::RankTooLarge { .. }
                | CdpaError::TooLarge { .. }
        )
    }
}
