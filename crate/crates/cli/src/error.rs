use std::path::Path;

use textgsl::corpus::IngestError;
use textgsl::embeddings::EmbeddingError;
use textgsl::graph::conllu::ConlluError;
use textgsl::graph::GraphError;
use textgsl::model::ModelError;
use textgsl::train::TrainError;
use thiserror::Error;

/// Usage and configuration problems exit with 1, everything that fails
/// after the inputs were accepted exits with 2.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub fn write(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Runtime(format!("cannot write `{}`: {e}", path.display()))
    }
}

pub fn require_file(path: &Path, flag: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "missing file `{}`: check the {flag} path",
            path.display()
        )))
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<EmbeddingError> for CliError {
    fn from(e: EmbeddingError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<ConlluError> for CliError {
    fn from(e: ConlluError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(m) => CliError::Usage(format!("model configuration: {m}")),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            TrainError::ClassMismatch { .. } => CliError::Usage(format!(
                "{e}; evaluate with graphs from the checkpoint's label set"
            )),
            TrainError::Model(m) => m.into(),
            other => CliError::Runtime(other.to_string()),
        }
    }
}
