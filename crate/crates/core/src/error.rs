use thiserror::Error;

pub type Result<T> = std::result::Result<T, LabError>;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("action {0} is not yet available")]
    ActionUnavailable(usize),

    #[error("action {0} is not registered")]
    UnknownAction(usize),

    #[error("no available actions")]
    NoAvailableActions,

    #[error("episode has already terminated")]
    EpisodeTerminated,

    #[error("invalid latent space: {0}")]
    InvalidSpace(String),

    #[error("latent {0:?} lies outside the latent space bounds")]
    LatentOutOfBounds(Vec<f64>),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("every sampled pair has identical latents")]
    DegeneratePairs,

    #[error("input component {index} = {value} is outside [0, 1]; normalise before featurising")]
    Unnormalized { index: usize, value: f64 },

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("standard deviation must be strictly positive")]
    NonPositiveStd,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("too many faulted trials: {faulted} of {total}")]
    TooManyFaults { faulted: usize, total: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl LabError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Errors caused by user input rather than by a run going wrong.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            LabError::Config(_)
                | LabError::Json(_)
                | LabError::InvalidSpace(_)
                | LabError::InvalidSchedule(_)
        ) || matches!(self, LabError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound)
    }
}
