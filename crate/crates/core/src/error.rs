use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("coordinate {coord} outside arena of width {width}")]
    OutOfBounds { coord: i32, width: u32 },

    #[error("invalid agent id {agent} (have {n_agents} agents)")]
    InvalidAgent { agent: usize, n_agents: usize },

    #[error("invalid joint action {0}")]
    InvalidAction(String),

    #[error("state index {index} out of range ({count} states)")]
    InvalidStateIndex { index: usize, count: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("terminal state has no policy")]
    TerminalState,

    #[error("sample size {requested} exceeds the {available} available states")]
    SampleTooLarge { requested: usize, available: usize },

    #[error("solver did not converge after {iterations} iterations (KKT residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        best: Option<Box<crate::svr::SvrModel>>,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("missing artifact {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("stale artifact {}: {reason}", path.display())]
    StaleArtifact { path: PathBuf, reason: String },

    #[error("malformed {what}: {detail}")]
    Format { what: String, detail: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format {
            what: what.into(),
            detail: detail.into(),
        }
    }

    /// Short machine-readable tag, used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::OutOfBounds { .. } => "out_of_bounds",
            Error::InvalidAgent { .. } => "invalid_agent",
            Error::InvalidAction(_) => "invalid_action",
            Error::InvalidStateIndex { .. } => "invalid_state_index",
            Error::InvalidConfig(_) => "invalid_config",
            Error::Unsupported(_) => "unsupported",
            Error::TerminalState => "terminal_state",
            Error::SampleTooLarge { .. } => "sample_too_large",
            Error::NonConvergence { .. } => "non_convergence",
            Error::Numerical(_) => "numerical",
            Error::InvalidInput(_) => "invalid_input",
            Error::MissingArtifact(_) => "missing_artifact",
            Error::StaleArtifact { .. } => "stale_artifact",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
        }
    }
}
