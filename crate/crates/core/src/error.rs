use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input clip is empty")]
    EmptyClip,
    #[error("frame length {frame} exceeds clip length {clip}")]
    FrameTooLong { frame: usize, clip: usize },
    #[error("n_mfcc ({n_mfcc}) exceeds the number of mel filters ({n_mel})")]
    TooManyCoefficients { n_mfcc: usize, n_mel: usize },
    #[error("invalid frontend config: {0}")]
    FrontendConfig(String),
    #[error("unsupported wav encoding: {0}")]
    UnsupportedWav(String),
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("graph has been freed")]
    GraphFreed,
    #[error("missing gradient for segment `{0}`")]
    MissingGrad(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("invalid model spec: {0}")]
    InvalidModel(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty dataset: {0}")]
    EmptyData(String),
    #[error("unknown task id {0}")]
    UnknownTask(usize),

    #[error("corpus: {0}")]
    Corpus(String),

    #[error("accuracy matrix cell R[{row}][{col}] is not populated")]
    Unpopulated { row: usize, col: usize },
    #[error("accuracy matrix cell R[{row}][{col}] already written")]
    AlreadyWritten { row: usize, col: usize },

    #[error("config{}: field `{field}`: {message}", line.map(|l| format!(" line {l}")).unwrap_or_default())]
    Config {
        field: String,
        line: Option<usize>,
        message: String,
    },
    #[error("non-finite loss while training task {task} (epoch {epoch}); diagnostic checkpoint at {checkpoint}")]
    DivergedLoss {
        task: usize,
        epoch: usize,
        checkpoint: String,
    },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            line: None,
            message: message.into(),
        }
    }
}
