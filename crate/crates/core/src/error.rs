use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("recording has no samples")]
    EmptyRecording,
    #[error("recording times must be finite and strictly increasing (sample {index})")]
    UnorderedSamples { index: usize },
    #[error("signal contains no present values")]
    AllMissing,
    #[error("signal of {len} samples is shorter than the smoothing window {window}")]
    TooShort { len: usize, window: usize },
    #[error("trim at minute {cut} is not inside a signal of {len} minutes")]
    InvalidTrim { cut: usize, len: usize },
    #[error("operation would leave an empty signal")]
    EmptySignal,
    #[error("scaler needs at least two values with nonzero variance")]
    DegenerateScale,
    #[error("input length {in_len} exceeds fixed length {fixed_len}")]
    PadOverflow { in_len: usize, fixed_len: usize },
    #[error("forecast history is empty or too short")]
    EmptyHistory,
    #[error("non-finite value encountered: {0}")]
    NumericalDivergence(String),
    #[error("shape mismatch: {0}")]
    ShapeError(String),
    #[error("nothing to evaluate")]
    EmptyEvaluation,
    #[error("least-squares fit needs at least two distinct variances")]
    DegenerateFit,
    #[error("{patients} patients cannot fill {folds} folds")]
    TooFewPatients { patients: usize, folds: usize },
    #[error("datasets were not produced by the same preprocessing config")]
    DatasetMismatch,
    #[error("values from validation patient {0} reached a training step")]
    Leakage(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("adapter protocol error: {0}")]
    AdapterProtocol(String),
    #[error("adapter did not answer within {0:?}")]
    AdapterTimeout(std::time::Duration),
    #[error("adapter returned {got} values for {recording_id}#{seg_index}, expected {expected}")]
    BadPrediction {
        recording_id: String,
        seg_index: usize,
        got: usize,
        expected: usize,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
