use std::path::Path;

use thiserror::Error;

use crate::centroids::CentroidError;
use crate::dataset::DatasetError;
use crate::embed::EmbedError;
use crate::importance::ImportanceError;
use crate::ontology::OntologyError;
use crate::render::RenderError;

/// Failure of a pipeline stage, classified by process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, configuration or parameter combinations.
    #[error("{0}")]
    Usage(String),
    /// Unreadable, malformed or inconsistent input files.
    #[error("{0}")]
    Input(String),
    /// The optimizer produced non-finite values.
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub(crate) fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Input(format!("{}: {err}", path.display()))
    }

    pub(crate) fn in_file(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Input(format!("{}: {err}", path.display()))
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<OntologyError> for CliError {
    fn from(e: OntologyError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<EmbedError> for CliError {
    fn from(e: EmbedError) -> Self {
        match e {
            EmbedError::NonFiniteLoss { .. } | EmbedError::NonFiniteCoords => CliError::Numerical(e.to_string()),
            EmbedError::PerplexityTooLarge { .. } | EmbedError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<CentroidError> for CliError {
    fn from(e: CentroidError) -> Self {
        match e {
            CentroidError::NonFinite => CliError::Numerical(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<ImportanceError> for CliError {
    fn from(e: ImportanceError) -> Self {
        match e {
            ImportanceError::TopKTooLarge { .. } | ImportanceError::NoPermutations => CliError::Usage(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<RenderError> for CliError {
    fn from(e: RenderError) -> Self {
        match e {
            RenderError::EmptyEmbedding | RenderError::EmptyTable => CliError::Input(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}
