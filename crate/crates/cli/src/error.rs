use dvfcast_core::CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: CoreError,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl PipelineError {
    /// 2 for configuration problems, 3 for numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Numerical(_) => 3,
            PipelineError::Core { source, .. } => match source {
                CoreError::Config(_) | CoreError::InvalidGrid(_) => 2,
                CoreError::Diverged { .. } | CoreError::NonFinite(_) | CoreError::Degenerate(_) => 3,
                CoreError::Autodiff(dvfcast_autodiff::AutodiffError::NonFinite(_)) => 3,
                CoreError::Autodiff(dvfcast_autodiff::AutodiffError::Config(_)) => 2,
                _ => 1,
            },
            PipelineError::Io { .. } | PipelineError::Csv(_) => 1,
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

/// Attaches a short description to core errors.
pub trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T>;
}

impl<T> Context<T> for std::result::Result<T, CoreError> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|source| PipelineError::Core { context: what(), source })
    }
}

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}
