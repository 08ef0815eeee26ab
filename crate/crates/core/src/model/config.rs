use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Which branches feed the Bi-GRU fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Sequence and structure branches concatenated.
    #[serde(rename = "full")]
    Full,
    /// Structure branch only (no long-range sequential learning).
    #[serde(rename = "no-LSL")]
    NoLsl,
    /// Sequence branch only (no diverse structural learning).
    #[serde(rename = "no-DSL")]
    NoDsl,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Full, Mode::NoLsl, Mode::NoDsl];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::NoLsl => "no-LSL",
            Mode::NoDsl => "no-DSL",
        }
    }

    pub fn uses_sequence(self) -> bool {
        self != Mode::NoLsl
    }

    pub fn uses_structure(self) -> bool {
        self != Mode::NoDsl
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Mode::Full),
            "no-lsl" => Ok(Mode::NoLsl),
            "no-dsl" => Ok(Mode::NoDsl),
            _ => Err(format!("unknown mode `{s}` (expected full, no-LSL or no-DSL)")),
        }
    }
}

/// Nonlinearity applied to the aggregated neighbour message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Hidden width of the encoder, the message passing network and the fusion.
    pub hidden: usize,
    pub ff_dim: usize,
    pub encoder_layers: usize,
    pub heads: usize,
    pub mpnn_steps: usize,
    pub message_activation: Activation,
    pub positional_encoding: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 96,
            ff_dim: 192,
            encoder_layers: 1,
            heads: 1,
            mpnn_steps: 2,
            message_activation: Activation::Relu,
            positional_encoding: true,
        }
    }
}

/// Everything that determines parameter shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub config: ModelConfig,
    pub mode: Mode,
    pub input_dim: usize,
    pub classes: usize,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<(), String> {
        let c = &self.config;
        if c.hidden == 0 || c.ff_dim == 0 || self.input_dim == 0 {
            return Err("hidden, ff_dim and input_dim must be positive".into());
        }
        if c.heads == 0 || !c.hidden.is_multiple_of(c.heads) {
            return Err(format!("hidden width {} not divisible by {} heads", c.hidden, c.heads));
        }
        if c.positional_encoding && !c.hidden.is_multiple_of(2) {
            return Err(format!("positional encoding needs an even hidden width, got {}", c.hidden));
        }
        if self.classes < 2 {
            return Err(format!("need at least 2 classes, got {}", self.classes));
        }
        Ok(())
    }
}
