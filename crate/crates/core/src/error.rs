use thiserror::Error;

pub type Result<T, E = SimError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("infeasible schedule: {jobs} jobs need an initial pass but only {micro_windows} micro-windows are available")]
    InfeasibleSchedule { jobs: usize, micro_windows: usize },

    #[error("window {window}: {source}")]
    Window {
        window: usize,
        #[source]
        source: Box<SimError>,
    },

    #[error("scenario schema error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl SimError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        SimError::InvalidInput(msg.into())
    }

    pub(crate) fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        SimError::Schema {
            path: path.into(),
            message: message.into(),
        }
    }
}
