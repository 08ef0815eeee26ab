//! Run configuration file and its resolution against CLI flags.
//!
//! Precedence is CLI flag, then config file, then built-in default. The
//! default L2 weight depends on the dataset name when one is given.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};
use textgsl::embeddings::DEFAULT_DIM;
use textgsl::model::{Mode, ModelConfig};
use textgsl::train::experiments::DEFAULT_RATIOS;
use textgsl::train::{default_l2_for, TrainConfig};

use crate::error::{require_file, CliError};

/// The published JSON schema for [`ConfigFile`].
pub const SCHEMA: &str = include_str!("../config.schema.json");

pub const DEFAULT_SEEDS: [u64; 3] = [1, 2, 3];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub dataset: Option<String>,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainOverrides,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub ratios: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default)]
    pub docs: Option<PathBuf>,
    #[serde(default)]
    pub graphs: Option<PathBuf>,
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
    #[serde(default)]
    pub embedding_dim: Option<usize>,
    #[serde(default)]
    pub oov_seed: Option<u64>,
}

impl DataSection {
    /// Fields of `over` win where they are set.
    pub fn merged(&self, over: &DataSection) -> DataSection {
        DataSection {
            docs: over.docs.clone().or_else(|| self.docs.clone()),
            graphs: over.graphs.clone().or_else(|| self.graphs.clone()),
            embeddings: over.embeddings.clone().or_else(|| self.embeddings.clone()),
            embedding_dim: over.embedding_dim.or(self.embedding_dim),
            oov_seed: over.oov_seed.or(self.oov_seed),
        }
    }

    pub fn path(&self, role: &str) -> Result<&Path, CliError> {
        let (p, flag) = match role {
            "docs" => (&self.docs, "--docs"),
            "graphs" => (&self.graphs, "--graphs"),
            _ => (&self.embeddings, "--embeddings"),
        };
        let p = p.as_deref().ok_or_else(|| {
            CliError::Usage(format!("no {role} file given: pass {flag} or set data.{role} in the config"))
        })?;
        require_file(p, flag)?;
        Ok(p)
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim.unwrap_or(DEFAULT_DIM)
    }

    pub fn oov_seed(&self) -> u64 {
        self.oov_seed.unwrap_or(0)
    }
}

fn explicit<'de, D, T>(d: D) -> Result<Option<Option<T>>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    Option::<T>::deserialize(d).map(Some)
}

/// Training fields that may be set; unset fields fall through.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l2_weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout_str: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout_seq: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    /// `null` in the file disables early stopping.
    #[serde(default, deserialize_with = "explicit", skip_serializing_if = "Option::is_none")]
    pub patience: Option<Option<usize>>,
}

impl TrainOverrides {
    pub fn apply(&self, cfg: &mut TrainConfig) {
        macro_rules! set {
            ($($f:ident),*) => {$(
                if let Some(v) = self.$f.clone() {
                    cfg.$f = v;
                }
            )*};
        }
        set!(learning_rate, epochs, batch_size, l2_weight, dropout_str, dropout_seq, val_ratio, seed, mode, patience);
    }
}

/// Everything a training-type command resolved to. Its hash identifies
/// the configuration in the run manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub dataset: Option<String>,
    pub embedding_dim: usize,
    pub oov_seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratios: Option<Vec<f64>>,
}

pub fn resolve_train(file: &ConfigFile, cli: &TrainOverrides, dataset: Option<&str>) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    if let Some(name) = dataset.or(file.dataset.as_deref()) {
        cfg.l2_weight = default_l2_for(name);
    }
    file.train.apply(&mut cfg);
    cli.apply(&mut cfg);
    cfg
}

pub fn resolve(file: &ConfigFile, data: &DataSection, cli: &TrainOverrides, dataset: Option<&str>) -> Result<Resolved, CliError> {
    let train = resolve_train(file, cli, dataset);
    train.validate().map_err(|e| CliError::Usage(format!("invalid training config: {e}")))?;
    Ok(Resolved {
        dataset: dataset.map(str::to_string).or_else(|| file.dataset.clone()),
        embedding_dim: data.embedding_dim(),
        oov_seed: data.oov_seed(),
        model: file.model.clone(),
        train,
        seeds: None,
        ratios: None,
    })
}

pub fn seeds(file: &ConfigFile, cli: Option<&[u64]>) -> Result<Vec<u64>, CliError> {
    let s = cli.map(<[u64]>::to_vec).or_else(|| file.seeds.clone()).unwrap_or(DEFAULT_SEEDS.to_vec());
    if s.is_empty() {
        return Err(CliError::Usage("at least one seed is required".into()));
    }
    Ok(s)
}

pub fn ratios(file: &ConfigFile, cli: Option<&[f64]>) -> Result<Vec<f64>, CliError> {
    let r = cli.map(<[f64]>::to_vec).or_else(|| file.ratios.clone()).unwrap_or(DEFAULT_RATIOS.to_vec());
    if r.is_empty() || r.iter().any(|&x| !(x > 0.0 && x <= 1.0)) {
        return Err(CliError::Usage(format!("ratios must be non-empty and in (0, 1], got {r:?}")));
    }
    Ok(r)
}

impl ConfigFile {
    pub fn parse(text: &str, origin: &Path) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| {
            CliError::Usage(format!(
                "config `{}` does not match the schema: {e} (see config.schema.json)",
                origin.display()
            ))
        })
    }

    /// Reads a config file; relative data paths are taken relative to it.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        require_file(path, "--config")?;
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config `{}`: {e}", path.display())))?;
        let mut cfg = Self::parse(&text, path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data.docs, &mut cfg.data.graphs, &mut cfg.data.embeddings].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn keys(v: &serde_json::Value) -> BTreeSet<String> {
        v["properties"].as_object().unwrap().keys().cloned().collect()
    }

    fn struct_keys<T: Serialize>(t: &T) -> BTreeSet<String> {
        serde_json::to_value(t).unwrap().as_object().unwrap().keys().cloned().collect()
    }

    #[test]
    fn schema_lists_exactly_the_accepted_fields() {
        let schema: serde_json::Value = serde_json::from_str(SCHEMA).unwrap();
        let file = ConfigFile::default();
        assert_eq!(keys(&schema), struct_keys(&file));
        let props = &schema["properties"];
        assert_eq!(keys(&props["model"]), struct_keys(&ModelConfig::default()));
        assert_eq!(keys(&props["train"]), struct_keys(&TrainConfig::default()));
        let data = DataSection {
            docs: Some("a".into()),
            graphs: Some("b".into()),
            embeddings: Some("c".into()),
            embedding_dim: Some(1),
            oov_seed: Some(0),
        };
        assert_eq!(keys(&props["data"]), struct_keys(&data));
    }

    #[test]
    fn cli_beats_file_beats_default() {
        let file = ConfigFile::parse(r#"{"train": {"epochs": 7, "seed": 2, "learning_rate": 0.01}}"#, Path::new("x")).unwrap();
        let cli = TrainOverrides {
            seed: Some(9),
            ..Default::default()
        };
        let cfg = resolve_train(&file, &cli, None);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.epochs, 7);
        assert_eq!(cfg.learning_rate, 0.01);
        assert_eq!(cfg.batch_size, TrainConfig::default().batch_size);
    }

    #[test]
    fn dataset_sets_the_l2_default_only() {
        let file = ConfigFile::parse(r#"{"dataset": "R8"}"#, Path::new("x")).unwrap();
        assert_eq!(resolve_train(&file, &TrainOverrides::default(), None).l2_weight, 5e-4);
        let file = ConfigFile::parse(r#"{"dataset": "R8", "train": {"l2_weight": 0.0}}"#, Path::new("x")).unwrap();
        assert_eq!(resolve_train(&file, &TrainOverrides::default(), None).l2_weight, 0.0);
        assert_eq!(resolve_train(&ConfigFile::default(), &TrainOverrides::default(), Some("mr")).l2_weight, 5e-5);
    }

    #[test]
    fn null_patience_disables_early_stopping() {
        let file = ConfigFile::parse(r#"{"train": {"patience": null}}"#, Path::new("x")).unwrap();
        assert_eq!(file.train.patience, Some(None));
        assert_eq!(resolve_train(&file, &TrainOverrides::default(), None).patience, None);
        let unset = ConfigFile::parse(r#"{"train": {}}"#, Path::new("x")).unwrap();
        assert_eq!(resolve_train(&unset, &TrainOverrides::default(), None).patience, Some(20));
    }

    #[test]
    fn unknown_field_is_a_usage_error() {
        let err = ConfigFile::parse(r#"{"train": {"epoch": 3}}"#, Path::new("cfg.json")).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        let msg = err.to_string();
        assert!(msg.contains("epoch") && msg.contains("cfg.json") && !msg.contains('\n'), "{msg}");
    }

    #[test]
    fn seeds_and_ratios_follow_precedence() {
        let file = ConfigFile::parse(r#"{"seeds": [4, 5], "ratios": [0.5]}"#, Path::new("x")).unwrap();
        assert_eq!(seeds(&file, None).unwrap(), [4, 5]);
        assert_eq!(seeds(&file, Some(&[8])).unwrap(), [8]);
        assert_eq!(seeds(&ConfigFile::default(), None).unwrap(), DEFAULT_SEEDS);
        assert_eq!(ratios(&file, None).unwrap(), [0.5]);
        assert_eq!(ratios(&ConfigFile::default(), None).unwrap(), DEFAULT_RATIOS);
        assert!(ratios(&file, Some(&[1.5])).is_err());
    }
}
