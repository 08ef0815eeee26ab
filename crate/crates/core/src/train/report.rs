use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::corpus::Split;
use crate::model::ModelConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean data loss over training batches (dropout active).
    pub train_loss: f64,
    /// `0.5 × l2_weight × ‖θ‖²` at the end of the epoch.
    pub l2_penalty: f64,
    /// Accuracy on the training split in evaluation mode.
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    /// Raw relation weights `[co, syn, sem]`, absent without the structure branch.
    pub gammas: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub label: String,
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub split: Split,
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub loss: f64,
    pub per_class: Vec<ClassAccuracy>,
}

/// Everything needed to audit a run. Timing is kept out so that identical
/// inputs give byte-identical reports; it goes to the progress log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub config: TrainConfig,
    pub model: ModelConfig,
    pub classes: Vec<String>,
    pub train_docs: usize,
    pub val_docs: usize,
    pub test_docs: usize,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub stopped_early: bool,
    pub test: Option<Evaluation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<String>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn test_accuracy(&self) -> Option<f64> {
        self.test.as_ref().map(|e| e.accuracy)
    }
}
