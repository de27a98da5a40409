use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{self, DomainDataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::model::DEFAULT_WIDTHS;
use crate::stylecal::{AafConfig, CalibrationConfig};
use crate::tensor::{Precision, SgdConfig};

pub const CONFIG_VERSION: u32 = 1;

/// Where training images come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// A directory written by `data::save`.
    Path(PathBuf),
    /// Generated on the fly.
    Synthetic(SyntheticSpec),
}

impl DataSource {
    pub fn load(&self) -> Result<DomainDataset> {
        match self {
            DataSource::Path(p) => data::load(p),
            DataSource::Synthetic(spec) => data::generate(spec),
        }
    }
}

/// One training run. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub version: u32,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: SgdConfig,
    pub calibration: CalibrationConfig,
    pub aaf: AafConfig,
    /// Insert the style layer at all. `false` gives the plain ERM network.
    pub style_layer: bool,
    /// Conv widths of the feature extractor blocks.
    pub widths: Vec<usize>,
    pub seed: u64,
    pub precision: Precision,
    pub data: DataSource,
    pub target_domain: usize,
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            version: CONFIG_VERSION,
            epochs: 40,
            batch_size: 32,
            optimizer: SgdConfig::default(),
            calibration: CalibrationConfig::default(),
            aaf: AafConfig::default(),
            style_layer: true,
            widths: DEFAULT_WIDTHS.to_vec(),
            seed: 0,
            precision: Precision::Single,
            data: DataSource::Synthetic(SyntheticSpec::amplitude_shift(0)),
            target_domain: 0,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        if self.widths.is_empty() {
            return Err(Error::Config("widths must name at least one block".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!(
                "val_fraction must be in [0, 1), got {}",
                self.val_fraction
            )));
        }
        self.optimizer.validate()?;
        self.calibration.validate()?;
        self.aaf.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON encoding, lowercase hex.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_roundtrip_and_defaults() {
        let cfg = TrainConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(TrainConfig::from_json(&text).unwrap(), cfg);
        let sparse = TrainConfig::from_json(r#"{"version": 1, "epochs": 3}"#).unwrap();
        assert_eq!(sparse.epochs, 3);
        assert_eq!(sparse.calibration.eta, 0.5);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = TrainConfig::from_json(r#"{"version": 1, "epoch": 3}"#).unwrap_err();
        assert!(err.to_string().contains("epoch"), "{err}");
        assert!(TrainConfig::from_json(r#"{"calibration": {"etaa": 0.1}}"#).is_err());
    }

    #[test]
    fn version_checked() {
        assert!(TrainConfig::from_json(r#"{"version": 2}"#).is_err());
    }

    #[test]
    fn digest_tracks_content() {
        let a = TrainConfig::default();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
        b.seed = 1;
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn dataset_path_source() {
        let cfg = TrainConfig::from_json(r#"{"data": {"path": "data/x"}}"#).unwrap();
        assert_eq!(cfg.data, DataSource::Path("data/x".into()));
    }
}
