use std::path::{Path, PathBuf};

use chestxr::data::AugmentationConfig;
use chestxr::labels::PolicyConfig;
use chestxr::train::TrainConfig;
use chestxr::zoo::ArchId;
use chestxr::Error;
use serde::Deserialize;

/// Default data root when neither the config nor `--data-root` names one.
pub const DATA_ROOT_ENV: &str = "CHESTXR_DATA_ROOT";

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSelector {
    pub arch: ArchId,
    /// Defaults to true for the ImageNet backbones and false for CustomNet.
    pub pretrained: Option<bool>,
}

impl Default for ModelSelector {
    fn default() -> Self {
        ModelSelector {
            arch: ArchId::CustomNet,
            pretrained: None,
        }
    }
}

impl ModelSelector {
    pub fn pretrained(&self) -> bool {
        self.pretrained.unwrap_or(self.arch != ArchId::CustomNet)
    }
}

/// Declarative run description read from a TOML file. Relative paths are
/// resolved against the directory holding the file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data_root: Option<PathBuf>,
    pub train_csv: Option<PathBuf>,
    /// When absent, `train` carves a patient-disjoint validation split out
    /// of `train_csv`.
    pub valid_csv: Option<PathBuf>,
    pub test_csv: Option<PathBuf>,
    pub val_fraction: f64,
    pub split_seed: u64,
    pub output_dir: Option<PathBuf>,
    pub model: ModelSelector,
    pub policy: PolicyConfig,
    pub train: TrainConfig,
    pub augmentation: AugmentationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_root: None,
            train_csv: None,
            valid_csv: None,
            test_csv: None,
            val_fraction: 0.2,
            split_seed: 0,
            output_dir: None,
            model: ModelSelector::default(),
            policy: PolicyConfig::default(),
            train: TrainConfig::default(),
            augmentation: AugmentationConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub arch: Option<ArchId>,
    pub data_root: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub threshold: Option<f64>,
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, Error> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for p in [
            &mut cfg.data_root,
            &mut cfg.train_csv,
            &mut cfg.valid_csv,
            &mut cfg.test_csv,
            &mut cfg.output_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, Error> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        RunConfig::from_toml(&text, base)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.train.seed = seed;
            self.split_seed = seed;
        }
        if let Some(arch) = o.arch {
            self.model.arch = arch;
        }
        if let Some(root) = &o.data_root {
            self.data_root = Some(root.clone());
        }
        if self.data_root.is_none() {
            self.data_root = std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from);
        }
        if let Some(out) = &o.out {
            self.output_dir = Some(out.clone());
        }
        if let Some(t) = o.threshold {
            self.train.decision_threshold = t;
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.policy.validate()?;
        self.train.validate()?;
        self.augmentation.validate()?;
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!(
                "val_fraction must be in (0, 1), got {}",
                self.val_fraction
            )));
        }
        Ok(())
    }

    /// Data root, falling back to the directory of `csv`.
    pub fn data_root_for(&self, csv: &Path) -> PathBuf {
        self.data_root
            .clone()
            .unwrap_or_else(|| csv.parent().map(Path::to_path_buf).unwrap_or_default())
    }

    pub fn output_dir(&self) -> Result<&Path, Error> {
        self.output_dir.as_deref().ok_or_else(|| {
            Error::Config("no output directory: pass --out or set output_dir".into())
        })
    }
}

pub fn require<'a>(value: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, Error> {
    value
        .as_deref()
        .ok_or_else(|| Error::Config(format!("{what} not given")))
}

pub fn require_file(path: &Path) -> Result<(), Error> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::NotFound(path.to_path_buf()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_nested_sections() {
        let text = r#"
            data_root = "data"
            train_csv = "data/train.csv"
            val_fraction = 0.25

            [model]
            arch = "resnet50"

            [policy]
            u_one_labels = ["Edema"]

            [train]
            max_epochs = 3
            seed = 11

            [augmentation]
            resize_hw = [64, 64]
        "#;
        let cfg = RunConfig::from_toml(text, Path::new("/base")).unwrap();
        assert_eq!(cfg.data_root.as_deref(), Some(Path::new("/base/data")));
        assert_eq!(cfg.model.arch, ArchId::ResNet50);
        assert!(cfg.model.pretrained());
        assert_eq!(cfg.policy.u_one_labels, vec!["Edema".to_string()]);
        assert_eq!(cfg.train.max_epochs, 3);
        assert_eq!(cfg.train.batch_size, 96);
        assert_eq!(cfg.augmentation.resize_hw, (64, 64));
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("epochs = 3", Path::new(".")).is_err());
        assert!(RunConfig::from_toml("[train]\nlr = 0.1", Path::new(".")).is_err());
    }

    #[test]
    fn overrides_win() {
        let mut cfg = RunConfig::default();
        cfg.apply(&Overrides {
            seed: Some(4),
            arch: Some(ArchId::Vgg16),
            threshold: Some(0.7),
            ..Default::default()
        });
        assert_eq!(cfg.train.seed, 4);
        assert_eq!(cfg.model.arch, ArchId::Vgg16);
        assert_eq!(cfg.train.decision_threshold, 0.7);
        assert!(!ModelSelector::default().pretrained());
    }
}
