use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced anywhere in the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{what} index {index} out of range 1..={max}")]
    Index {
        what: &'static str,
        index: usize,
        max: usize,
    },

    #[error("training diverged: non-finite {component}{}", epoch.map(|e| format!(" at epoch {e}")).unwrap_or_default())]
    Training {
        component: String,
        epoch: Option<usize>,
    },

    #[error("sampling produced a non-finite state at step {step}")]
    Sampling { step: usize },

    #[error("unknown {what} {id}")]
    Lookup { what: &'static str, id: usize },

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("unsupported format version {found} (this build reads version {supported}); re-export the file with a matching build")]
    Version { found: u16, supported: u16 },

    #[error("numeric guard: {0}")]
    Numeric(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(context: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn training(component: impl Into<String>) -> Self {
        Error::Training {
            component: component.into(),
            epoch: None,
        }
    }

    /// Attaches an epoch number to a training error; other variants pass through.
    pub fn at_epoch(self, epoch: usize) -> Self {
        match self {
            Error::Training { component, .. } => Error::Training {
                component,
                epoch: Some(epoch),
            },
            other => other,
        }
    }
}
