use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("timestep {t} outside [{min}, {max}]")]
    TimestepOutOfRange { t: usize, min: usize, max: usize },

    #[error("timestep {t} is not on the sampling grid (stride {stride})")]
    OffGrid { t: usize, stride: usize },

    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("{steps} sampling steps do not divide {train_steps} training timesteps")]
    GridMismatch { train_steps: usize, steps: usize },

    #[error("invalid mixture: {0}")]
    Mixture(String),

    #[error("unknown class label {0}")]
    UnknownClass(u32),

    #[error("invalid strategy: {0}")]
    Strategy(String),

    #[error("trajectory has no latent recorded at t={0}")]
    TrajectoryMiss(usize),

    #[error("back-disturbance in image-guided mode needs the cached forward noise")]
    MissingCachedNoise,

    #[error("non-finite value produced: {0}")]
    NonFinite(String),

    #[error("config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("sweep has {cells} cells, cap is {cap}")]
    SweepCap { cells: usize, cap: usize },

    #[error("{0}")]
    Analysis(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {reason}")]
    Parse { path: String, reason: String },
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code: 2 for anything the user can fix in the
    /// configuration, 3 for failures during the numerical run itself.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite(_)
            | Error::TrajectoryMiss(_)
            | Error::MissingCachedNoise
            | Error::Analysis(_) => 3,
            Error::Io { .. } => 3,
            _ => 2,
        }
    }
}
