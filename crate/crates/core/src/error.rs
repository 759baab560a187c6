use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate projection: |e1 . Bc| = {projection:e} T is below {epsilon:e} T")]
    DegenerateProjection { projection: f64, epsilon: f64 },

    #[error("point outside the field model domain: {0}")]
    OutOfDomain(String),

    #[error("waveform kind mismatch: {0}")]
    InvalidKind(String),

    #[error("incomplete count matrix: missing combination {0}")]
    IncompleteMatrix(String),

    #[error("incomplete eight-combination subset: missing {0}")]
    IncompleteSubset(String),

    #[error("indeterminate phase for sensor {sensor}: no contrast above the noise floor")]
    IndeterminatePhase { sensor: usize },

    #[error("invalid readout contrast {0}: must be positive")]
    InvalidContrast(f64),

    #[error("schedule size error: {0} sensors requested, supported range is 1..=6")]
    ScheduleSize(usize),

    #[error("fit did not converge after {iterations} iterations: {diagnostics}")]
    FitFailed {
        iterations: usize,
        best: Vec<f64>,
        diagnostics: String,
    },

    #[error("{0}")]
    Config(#[from] crate::config::ConfigError),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(String),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
