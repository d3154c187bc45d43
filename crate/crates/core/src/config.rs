//! Experiment configuration: one JSON document with a section per stage.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forecast::EsConfig;
use crate::train::TrainConfig;
use crate::types::{PreprocessConfig, SegmentConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LstmConfig {
    pub hidden: usize,
}

impl Default for LstmConfig {
    fn default() -> Self {
        Self { hidden: 512 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdapterConfig {
    pub timeout_secs: u64,
    /// Fine-tune the external model on training segments before predicting.
    pub finetune: bool,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            timeout_secs: 300,
            finetune: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub preprocess: PreprocessConfig,
    pub segment: SegmentConfig,
    pub train: TrainConfig,
    pub es: EsConfig,
    pub lstm: LstmConfig,
    pub adapter: AdapterConfig,
}

/// Short SHA-256 digest of a value's canonical JSON form.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    hex::encode(&Sha256::digest(&bytes)[..8])
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate()?;
        self.segment.validate()?;
        self.train.validate()?;
        if self.lstm.hidden == 0 {
            return Err(Error::InvalidConfig("lstm.hidden must be >= 1".into()));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }
}
