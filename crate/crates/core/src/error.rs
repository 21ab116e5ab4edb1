use thiserror::Error;

pub type Result<T, E = DareError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DareError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Likelihood mass under the prior fell below 1e-300.
    #[error("negligible evidence: {0}")]
    NegligibleEvidence(String),

    #[error("unknown question `{0}`")]
    UnknownQuestion(String),

    #[error("unknown participant `{0}`")]
    UnknownParticipant(String),

    #[error("option {option} out of range for question `{question}` with {num_options} options")]
    OptionOutOfRange {
        question: String,
        option: usize,
        num_options: usize,
    },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("instance too large for exact computation: {0}")]
    InstanceTooLarge(String),

    #[error("session: {0}")]
    Session(String),

    #[error("no scorable question remains")]
    SessionExhausted,

    #[error("undefined statistic: {0}")]
    UndefinedStatistic(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for DareError {
    fn from(err: std::io::Error) -> Self {
        DareError::Io(err.to_string())
    }
}
