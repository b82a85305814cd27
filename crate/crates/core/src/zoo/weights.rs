use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use super::ArchId;
use crate::error::{Error, Result};
use crate::nn::{Layer, Sequential};
use crate::tensorfile::{self, Tensors};

/// Directory holding `<arch>.safetensors` ImageNet weight files.
pub const WEIGHTS_DIR_ENV: &str = "CHESTXR_WEIGHTS_DIR";
/// Base URL from which missing weight files are fetched.
pub const WEIGHTS_URL_ENV: &str = "CHESTXR_WEIGHTS_URL";

/// Where pretrained backbone weights come from. Files use torchvision
/// state-dict names.
#[derive(Debug, Clone, Default)]
pub struct WeightSource {
    pub cache_dir: Option<PathBuf>,
    pub base_url: Option<String>,
    pub offline: bool,
}

impl WeightSource {
    /// Reads the cache directory and download URL from the environment.
    pub fn from_env(offline: bool) -> Self {
        WeightSource {
            cache_dir: std::env::var_os(WEIGHTS_DIR_ENV).map(PathBuf::from),
            base_url: std::env::var(WEIGHTS_URL_ENV)
                .ok()
                .filter(|s| !s.is_empty()),
            offline,
        }
    }

    pub fn offline(cache_dir: Option<PathBuf>) -> Self {
        WeightSource {
            cache_dir,
            base_url: None,
            offline: true,
        }
    }

    pub fn path_for(&self, arch: ArchId) -> Option<PathBuf> {
        self.cache_dir
            .as_ref()
            .map(|d| d.join(format!("{}.safetensors", arch.key())))
    }

    pub fn load(&self, arch: ArchId) -> Result<Tensors> {
        let fail = |message: String| Error::WeightFetch {
            arch: arch.key().to_string(),
            message,
        };
        let path = self
            .path_for(arch)
            .ok_or_else(|| fail(format!("no weight cache directory; set {WEIGHTS_DIR_ENV}")))?;
        if !path.exists() {
            if self.offline {
                return Err(fail(format!(
                    "{} not found and offline mode is set",
                    path.display()
                )));
            }
            let base = self.base_url.as_deref().ok_or_else(|| {
                fail(format!(
                    "{} not found and {WEIGHTS_URL_ENV} is unset",
                    path.display()
                ))
            })?;
            download(
                &format!("{}/{}.safetensors", base.trim_end_matches('/'), arch.key()),
                &path,
            )
            .map_err(|e| fail(format!("download failed: {e}")))?;
        }
        tensorfile::read(&path)
            .map(|(t, _)| t)
            .map_err(|e| fail(format!("{}: {e}", path.display())))
    }
}

fn download(url: &str, dest: &Path) -> std::result::Result<(), String> {
    log::info!("fetching {url}");
    if let Some(parent) = dest.parent() {
        fs::create_dir_all(parent).map_err(|e| e.to_string())?;
    }
    let response = ureq::get(url).call().map_err(|e| e.to_string())?;
    let tmp = dest.with_extension("part");
    let mut file = fs::File::create(&tmp).map_err(|e| e.to_string())?;
    io::copy(&mut response.into_body().into_reader(), &mut file).map_err(|e| e.to_string())?;
    fs::rename(&tmp, dest).map_err(|e| e.to_string())
}

/// Copies weights into the backbone by name. Every backbone tensor must be
/// present with a matching shape; classifier entries are ignored.
pub(super) fn apply(body: &mut Sequential, tensors: &Tensors, arch: ArchId) -> Result<()> {
    let map: HashMap<&str, _> = tensors.iter().map(|(k, v)| (k.as_str(), v)).collect();
    let mut missing = Vec::new();
    let mut mismatched = Vec::new();
    body.visit_params_mut(&mut |p| match map.get(p.name.as_str()) {
        Some(v) if v.shape() == p.value.shape() => p.value.assign(*v),
        Some(v) => mismatched.push(format!(
            "{} {:?} vs {:?}",
            p.name,
            p.value.shape(),
            v.shape()
        )),
        None => missing.push(p.name.clone()),
    });
    if missing.is_empty() && mismatched.is_empty() {
        return Ok(());
    }
    let mut message = String::new();
    if !missing.is_empty() {
        message.push_str(&format!(
            "{} tensors missing (first: {})",
            missing.len(),
            missing[0]
        ));
    }
    if !mismatched.is_empty() {
        if !message.is_empty() {
            message.push_str("; ");
        }
        message.push_str(&format!("shape mismatch: {}", mismatched.join(", ")));
    }
    Err(Error::WeightFetch {
        arch: arch.key().to_string(),
        message,
    })
}
