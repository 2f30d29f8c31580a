use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {shapes:?}")]
    ShapeMismatch {
        op: &'static str,
        shapes: Vec<Vec<usize>>,
    },

    #[error("non-finite output from {op}")]
    NonFinite { op: &'static str },

    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("no gradient entry for parameter {0}")]
    MissingGrad(usize),

    #[error("invalid timestep count {0}; need at least 2")]
    InvalidTimesteps(usize),

    #[error("timestep {t} outside [0, {max}]")]
    TimestepOutOfRange { t: usize, max: usize },

    #[error("alpha is zero at t={0}; x0 estimate is singular")]
    SingularAlpha(usize),

    #[error("invalid step set {steps:?}: {reason}")]
    InvalidStepSet { steps: Vec<usize>, reason: String },

    #[error("t={t} cannot be reached from step set {steps:?}")]
    Unreachable { t: usize, steps: Vec<usize> },

    #[error("teacher rollout from t={t_start} needs t_start >= k={k}")]
    RolloutTooShort { t_start: usize, k: usize },

    #[error("unknown class id {class} (model has {n_classes} classes)")]
    UnknownClass { class: usize, n_classes: usize },

    #[error("invalid model dimensions: {0}")]
    InvalidDims(String),

    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("training diverged at step {step}: loss is {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint format version {found} does not match supported version {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("{0}")]
    PartialRun(String),

    #[error("missing artifact {0}")]
    MissingArtifact(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Validation errors map to exit code 1 in the CLI; everything else is a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::InvalidStepSet { .. }
                | Error::InvalidTimesteps(_)
                | Error::InvalidDims(_)
                | Error::InvalidSpec(_)
                | Error::PartialRun(_)
                | Error::MissingArtifact(_)
        )
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
