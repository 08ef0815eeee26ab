use serde::{Deserialize, Serialize};

use crate::model::Mode;

pub const L2_DEFAULT: f64 = 5e-5;
pub const L2_LARGE_CORPORA: f64 = 5e-4;

/// Default L2 weight for a named dataset: `5e-4` for R8 and 20NG, `5e-5` otherwise.
pub fn default_l2_for(dataset: &str) -> f64 {
    match dataset.to_ascii_lowercase().as_str() {
        "r8" | "20ng" | "20newsgroups" => L2_LARGE_CORPORA,
        _ => L2_DEFAULT,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2_weight: f64,
    pub dropout_str: f64,
    pub dropout_seq: f64,
    pub val_ratio: f64,
    pub seed: u64,
    pub mode: Mode,
    /// Epochs without a validation improvement before stopping; `None` runs every epoch.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            epochs: 200,
            batch_size: 32,
            l2_weight: L2_DEFAULT,
            dropout_str: 0.5,
            dropout_seq: 0.65,
            val_ratio: 0.1,
            seed: 0,
            mode: Mode::Full,
            patience: Some(20),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.epochs == 0 {
            return Err("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return Err("batch_size must be at least 1".into());
        }
        if !(self.l2_weight >= 0.0 && self.l2_weight.is_finite()) {
            return Err(format!("l2_weight must be non-negative, got {}", self.l2_weight));
        }
        for (name, p) in [("dropout_str", self.dropout_str), ("dropout_seq", self.dropout_seq)] {
            if !(0.0..1.0).contains(&p) {
                return Err(format!("{name} must lie in [0, 1), got {p}"));
            }
        }
        if !(0.0..1.0).contains(&self.val_ratio) {
            return Err(format!("val_ratio must lie in [0, 1), got {}", self.val_ratio));
        }
        if self.patience == Some(0) {
            return Err("patience must be at least 1 (omit it to disable early stopping)".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_validation() {
        let c = TrainConfig::default();
        assert!(c.validate().is_ok());
        assert_eq!(default_l2_for("R8"), 5e-4);
        assert_eq!(default_l2_for("20ng"), 5e-4);
        assert_eq!(default_l2_for("mr"), 5e-5);
        for bad in [
            TrainConfig { epochs: 0, ..c.clone() },
            TrainConfig { dropout_seq: 1.0, ..c.clone() },
            TrainConfig { learning_rate: 0.0, ..c.clone() },
            TrainConfig { patience: Some(0), ..c.clone() },
            TrainConfig { l2_weight: -1.0, ..c.clone() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epochs": 3, "lr": 1}"#).is_err());
        let c: TrainConfig = serde_json::from_str(r#"{"epochs": 3, "mode": "no-DSL", "patience": null}"#).unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.mode, Mode::NoDsl);
        assert_eq!(c.patience, None);
    }
}
