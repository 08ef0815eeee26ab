//! Training, evaluation and experiment drivers.

pub mod config;
pub mod data;
pub mod experiments;
pub mod gradcheck;
pub mod harness;
pub mod report;
pub mod toy;

use thiserror::Error;

pub use config::{default_l2_for, TrainConfig};
pub use data::{Dataset, Example, FeatureBank};
pub use harness::{evaluate, train, InductiveAudit, NoObserver, ProgressLog, TrainObserver, TrainOutcome};
pub use report::{ClassAccuracy, EpochRecord, Evaluation, RunReport};

use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training configuration: {0}")]
    Config(String),
    #[error("training data: {0}")]
    Data(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("training diverged at epoch {epoch}, batch {batch}: non-finite values in `{tensor}`")]
    Divergence { epoch: usize, batch: usize, tensor: String },
    #[error("checkpoint has {model} classes but the data has {data}")]
    ClassMismatch { model: usize, data: usize },
    #[error("test document `{doc_id}` entered a training batch in epoch {epoch}")]
    Leak { epoch: usize, doc_id: String },
}
