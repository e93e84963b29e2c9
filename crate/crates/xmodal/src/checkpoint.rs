//! Trained models on disk.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use xmodal_core::model::{AlignmentModel, CcaOptions, Method};
use xmodal_core::{AblationFlags, Dataset, DistanceMetric, ProcrustesTransform, TrainConfig};

use crate::error::{Error, Result};
use crate::io::{dataset_bytes, read_file, write_file};

pub const FORMAT_VERSION: u32 = 1;

/// How a dataset is divided into train, validation and test parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSettings {
    pub test_fraction: f64,
    /// Share of the non-test records held out for early stopping; 0 disables it.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSettings {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CcaSettings {
    pub dim: Option<usize>,
    pub ridge: f64,
}

impl Default for CcaSettings {
    fn default() -> Self {
        let d = CcaOptions::default();
        Self {
            dim: d.dim,
            ridge: d.ridge,
        }
    }
}

impl From<CcaSettings> for CcaOptions {
    fn from(s: CcaSettings) -> Self {
        CcaOptions {
            dim: s.dim,
            ridge: s.ridge,
        }
    }
}

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub method: Method,
    pub train: TrainConfig,
    pub cca: CcaSettings,
    /// Refinement components; all off means no refinement.
    pub refinement: AblationFlags,
    pub split: SplitSettings,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            method: Method::Triplet,
            train: TrainConfig::default(),
            cca: CcaSettings::default(),
            refinement: AblationFlags::ALL,
            split: SplitSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: u32,
    pub settings: RunSettings,
    /// Distance the method was trained for; evaluation uses it by default.
    pub metric: DistanceMetric,
    /// SHA-256 of the training dataset's canonical serialization.
    pub dataset_fingerprint: String,
    /// SHA-256 over the settings and dataset fingerprint.
    pub fingerprint: String,
    pub threshold: f64,
    pub best_epoch: usize,
    pub correlations: Vec<f64>,
    pub transform: ProcrustesTransform,
    pub model: AlignmentModel,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_bytes())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("checkpoints serialize");
        bytes.push(b'\n');
        bytes
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = read_file(path)?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.into(),
            message: e.to_string(),
        })?;
        if ckpt.format != FORMAT_VERSION {
            return Err(Error::Format {
                path: path.into(),
                message: format!("unsupported checkpoint format {}", ckpt.format),
            });
        }
        Ok(ckpt)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn dataset_fingerprint(ds: &Dataset) -> String {
    sha256_hex(&dataset_bytes(ds))
}

pub fn run_fingerprint(settings: &RunSettings, dataset_fingerprint: &str) -> String {
    let mut bytes = serde_json::to_vec(settings).expect("settings serialize");
    bytes.extend_from_slice(dataset_fingerprint.as_bytes());
    sha256_hex(&bytes)
}
