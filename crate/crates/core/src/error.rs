use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure categories surfaced by the pipeline.
///
/// The variants split into three families that callers (the CLI in
/// particular) map onto distinct exit codes: contract/validation problems,
/// missing inputs, and numerical failures. See [`Error::kind`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("{routine} did not converge within {iterations} iterations")]
    NonConvergence {
        routine: &'static str,
        iterations: usize,
    },

    #[error("matrix is not positive semi-definite: smallest eigenvalue {min_eigenvalue:e} below -{tolerance:e}")]
    NotPsd { min_eigenvalue: f64, tolerance: f64 },

    #[error("degenerate bag: centered rank {rank} is below the subspace dimension {dim}")]
    DegenerateBag { rank: usize, dim: usize },

    #[error("singular subspace overlap (condition number {condition:e}): at least one principal angle is pi/2")]
    SingularOverlap { condition: f64 },

    #[error("no prior knowledge instances supplied")]
    MissingPrior,

    #[error("cluster {0} is empty")]
    EmptyCluster(usize),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("bag {id}: {source}")]
    Bag {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}:{line}: {message}", path.display())]
    Load {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Coarse failure class, stable across releases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    MissingInput,
    Numerical,
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn in_bag(self, id: &str) -> Self {
        Error::Bag {
            id: id.to_string(),
            source: Box::new(self),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Contract(_)
            | Error::Load { .. }
            | Error::EmptyDataset
            | Error::Config(_)
            | Error::MissingPrior => ErrorKind::Validation,
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                ErrorKind::MissingInput
            }
            Error::Io { .. } => ErrorKind::Validation,
            Error::NonConvergence { .. }
            | Error::NotPsd { .. }
            | Error::DegenerateBag { .. }
            | Error::SingularOverlap { .. }
            | Error::EmptyCluster(_)
            | Error::NonFinite(_) => ErrorKind::Numerical,
            Error::Bag { source, .. } => source.kind(),
        }
    }
}
