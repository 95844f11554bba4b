use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] sspose::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("scene generation failed: {0}")]
    Generation(String),
    #[error("dataset error: {0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    /// Non-finite loss; carries the trace up to and including the bad row.
    #[error("optimization diverged at iteration {iteration}")]
    Diverged { iteration: usize, trace: Vec<crate::optimize::TraceRow> },
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
