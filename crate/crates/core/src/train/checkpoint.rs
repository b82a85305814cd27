use std::collections::HashMap;
use std::path::Path;

use serde::de::DeserializeOwned;

use super::TrainConfig;
use crate::data::AugmentationConfig;
use crate::error::{Error, Result};
use crate::labels::{label_names, PolicyConfig};
use crate::tensorfile::{self, Tensors};
use crate::zoo::{build_architecture, Model, ModelSpec};

pub const CHECKPOINT_FORMAT: &str = "chestxr-checkpoint";
pub const CHECKPOINT_VERSION: &str = "1";

/// Best-epoch weights plus everything needed to rebuild and reuse them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model_spec: ModelSpec,
    pub train_config: TrainConfig,
    pub policy: PolicyConfig,
    pub augmentation: AugmentationConfig,
    pub best_epoch: usize,
    pub best_val_auroc: f64,
    pub label_names: Vec<String>,
    pub weights: Tensors,
}

impl Checkpoint {
    /// Rebuilds the network and loads the stored tensors.
    pub fn to_model(&self) -> Result<Model> {
        let mut model = build_architecture(&self.model_spec, 0)?;
        model.load_state(&self.weights)?;
        Ok(model)
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    let metadata = HashMap::from([
        ("format".to_string(), CHECKPOINT_FORMAT.to_string()),
        ("format_version".to_string(), CHECKPOINT_VERSION.to_string()),
        ("model_spec".to_string(), json(&checkpoint.model_spec)?),
        ("train_config".to_string(), json(&checkpoint.train_config)?),
        ("policy".to_string(), json(&checkpoint.policy)?),
        ("augmentation".to_string(), json(&checkpoint.augmentation)?),
        ("best_epoch".to_string(), checkpoint.best_epoch.to_string()),
        (
            "best_val_auroc".to_string(),
            json(&checkpoint.best_val_auroc)?,
        ),
        ("label_names".to_string(), json(&checkpoint.label_names)?),
    ]);
    let bytes = tensorfile::to_bytes(&checkpoint.weights, Some(metadata)).map_err(|message| {
        Error::Checkpoint {
            path: path.to_path_buf(),
            message,
        }
    })?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

fn json<T: serde::Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string(value)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    let corrupt = |message: String| Error::Checkpoint {
        path: path.to_path_buf(),
        message,
    };
    let (weights, meta) = tensorfile::read(path).map_err(corrupt)?;
    let field = |key: &str| {
        meta.get(key)
            .map(String::as_str)
            .ok_or_else(|| corrupt(format!("metadata field `{key}` missing")))
    };
    fn parse<T: DeserializeOwned>(key: &str, text: &str, path: &Path) -> Result<T> {
        serde_json::from_str(text).map_err(|e| Error::Checkpoint {
            path: path.to_path_buf(),
            message: format!("metadata field `{key}`: {e}"),
        })
    }
    if field("format")? != CHECKPOINT_FORMAT {
        return Err(corrupt(format!("not a {CHECKPOINT_FORMAT} file")));
    }
    let version = field("format_version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version.to_string(),
            expected: CHECKPOINT_VERSION.to_string(),
        });
    }
    let names: Vec<String> = parse("label_names", field("label_names")?, path)?;
    if names != label_names() {
        return Err(Error::LabelOrder {
            found: names,
            expected: label_names(),
        });
    }
    Ok(Checkpoint {
        model_spec: parse("model_spec", field("model_spec")?, path)?,
        train_config: parse("train_config", field("train_config")?, path)?,
        policy: parse("policy", field("policy")?, path)?,
        augmentation: parse("augmentation", field("augmentation")?, path)?,
        best_epoch: parse("best_epoch", field("best_epoch")?, path)?,
        best_val_auroc: parse("best_val_auroc", field("best_val_auroc")?, path)?,
        label_names: names,
        weights,
    })
}
