use std::path::PathBuf;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("index out of range: {0}")]
    Index(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("invalid state: {0}")]
    State(String),

    #[error("lookup failed: {0}")]
    Lookup(String),

    #[error("unsupported architecture: {0}")]
    Unsupported(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Training produced a NaN or infinite loss.
    #[error("non-finite loss at iteration {iteration}{}{}",
        config_id.map(|c| format!(" on config {c}")).unwrap_or_default(),
        last_good.map(|i| format!(", last good iteration {i}")).unwrap_or_default())]
    NonFiniteLoss {
        iteration: usize,
        config_id: Option<usize>,
        last_good: Option<usize>,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn format(offset: u64, reason: impl Into<String>) -> Self {
        Error::Format {
            offset,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, e: csv::Error) -> Self {
        let source = match e.into_kind() {
            csv::ErrorKind::Io(io) => io,
            other => std::io::Error::other(format!("{other:?}")),
        };
        Error::io(path, source)
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
