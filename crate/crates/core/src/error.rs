use std::path::PathBuf;

use thiserror::Error;

use crate::kernel::KernelError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{}: no rows", path.display())]
    NoRows { path: PathBuf },

    #[error("{}: row {row} has {found} columns, expected {expected}", path.display())]
    Ragged {
        path: PathBuf,
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("{}: {msg}", path.display())]
    Container { path: PathBuf, msg: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("graph has no edges")]
    NoEdges,

    #[error("threshold too small: {threshold} < P*d = {per_node}")]
    ShardThreshold { threshold: u64, per_node: u64 },

    #[error("non-finite loss{}", epoch.map(|e| format!(" at epoch {e}")).unwrap_or_default())]
    NonFiniteLoss { epoch: Option<usize> },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("infeasible LFR configuration: {0}")]
    Infeasible(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error(transparent)]
    Kernel(#[from] KernelError),

    #[error("{phase}: {source}")]
    Phase {
        phase: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_phase(self, phase: &'static str) -> Self {
        Error::Phase {
            phase,
            source: Box::new(self),
        }
    }

    /// True for failures caused by bad or mismatched input files or arguments
    /// rather than by the computation itself.
    pub fn is_input_error(&self) -> bool {
        if let Error::Phase { source, .. } = self {
            return source.is_input_error();
        }
        matches!(
            self,
            Error::Io { .. }
                | Error::Parse { .. }
                | Error::NoRows { .. }
                | Error::Ragged { .. }
                | Error::Container { .. }
                | Error::Config(_)
                | Error::Dimension(_)
        )
    }
}
