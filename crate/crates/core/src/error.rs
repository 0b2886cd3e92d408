use thiserror::Error;

use crate::emulator::TrajectoryPrediction;

pub type Result<T, E = EmuError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum EmuError {
    /// Caller handed in something malformed: wrong dimension, non-finite value, bad parameter.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("ill-conditioned problem: {0}")]
    IllConditioned(String),

    #[error("hyperparameter fit failed: {message} (best negative log-likelihood {best_objective:e})")]
    Fit { message: String, best_objective: f64 },

    #[error("likelihood evaluation failed: {0}")]
    Evaluation(String),

    #[error("integration failed at t = {t}: {message}")]
    Integration { t: f64, message: String },

    #[error("trajectory diverged at t = {t}; extremes so far: lower {lower:?}, upper {upper:?}")]
    Divergence {
        t: f64,
        lower: Vec<f64>,
        upper: Vec<f64>,
    },

    #[error("training run for design row {row} failed: {source}")]
    TrainingRow {
        row: usize,
        #[source]
        source: Box<EmuError>,
    },

    #[error("emulator for coordinate {coordinate} failed: {source}")]
    Coordinate {
        coordinate: usize,
        #[source]
        source: Box<EmuError>,
    },

    #[error("propagation failed at step {step}: {message}")]
    Propagation {
        step: usize,
        message: String,
        /// States computed before the failing step.
        partial: Box<TrajectoryPrediction>,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing upstream artifact {path}: run `{stage}` first")]
    MissingArtifact { path: String, stage: String },

    #[error("malformed file {path}: {message}")]
    Format { path: String, message: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<EmuError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl EmuError {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        EmuError::Usage(msg.into())
    }

    /// True for failures of the numerical machinery, as opposed to bad input or I/O.
    pub fn is_numerical(&self) -> bool {
        match self {
            EmuError::IllConditioned(_)
            | EmuError::Fit { .. }
            | EmuError::Evaluation(_)
            | EmuError::Integration { .. }
            | EmuError::Divergence { .. }
            | EmuError::Propagation { .. }
            | EmuError::InsufficientData(_) => true,
            EmuError::TrainingRow { source, .. }
            | EmuError::Coordinate { source, .. }
            | EmuError::Stage { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    /// Process exit status: 2 for configuration and input problems, 3 for
    /// numerical failures, 1 for anything else (I/O).
    pub fn exit_code(&self) -> i32 {
        match self {
            _ if self.is_numerical() => 3,
            EmuError::Stage { source, .. } => source.exit_code(),
            EmuError::Io(_) => 1,
            _ => 2,
        }
    }
}
