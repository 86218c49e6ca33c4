//! One JSON file drives a whole run. Unknown keys are rejected at every
//! nesting level, and each command writes a resolved snapshot next to its
//! outputs so a run can be replayed from what it actually used.

use crate::error::{Error, Result};
use crate::networks::NetworkConfig;
use crate::objectives::FeatureExtractor;
use crate::trainer::TrainConfig;
use crate::verification::VerifyMode;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractorKind {
    /// Frozen random-weight feature network, seeded.
    Deterministic,
    /// Raw-pixel shortcut; feature losses reduce to pixel L1.
    Identity,
    /// Weights loaded from an archive on disk.
    Archive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractorConfig {
    pub kind: ExtractorKind,
    pub seed: u64,
    pub path: Option<PathBuf>,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig {
            kind: ExtractorKind::Deterministic,
            seed: 0,
            path: None,
        }
    }
}

impl ExtractorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kind == ExtractorKind::Archive && self.path.is_none() {
            return Err(Error::Config(
                "extractor kind \"archive\" needs a path".into(),
            ));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<FeatureExtractor<f32>> {
        match self.kind {
            ExtractorKind::Deterministic => Ok(FeatureExtractor::deterministic(self.seed)),
            ExtractorKind::Identity => Ok(FeatureExtractor::identity()),
            ExtractorKind::Archive => {
                self.validate()?;
                FeatureExtractor::from_archive(self.path.as_ref().unwrap())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub mode: VerifyMode,
    pub trials: usize,
    /// Trial k derives its evaluation split from base_seed + k.
    pub base_seed: u64,
    pub normalize_templates: bool,
    /// Train one model per trial (default) or share one across all trials.
    pub retrain_per_trial: bool,
    /// Pre-trained checkpoint for shared mode; ignored when retraining.
    pub checkpoint: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            mode: VerifyMode::Fusion,
            trials: 5,
            base_seed: 0,
            normalize_templates: false,
            retrain_per_trial: true,
            checkpoint: None,
        }
    }
}

/// The whole run: network shape, training schedule, extractor choice,
/// evaluation setup, and paths. `train.image_size` governs training and
/// follows into every checkpoint; evaluation re-reads it from there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub extractor: ExtractorConfig,
    pub eval: EvalConfig,
    /// Catalog manifest, or a directory holding manifest.json.
    pub data: PathBuf,
    pub out_dir: PathBuf,
    /// Recorded in the snapshot; runs are deterministic regardless.
    pub deterministic: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            extractor: ExtractorConfig::default(),
            eval: EvalConfig::default(),
            data: PathBuf::from("fixtures"),
            out_dir: PathBuf::from("runs/default"),
            deterministic: true,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.train.validate()?;
        self.extractor.validate()?;
        if self.eval.trials == 0 {
            return Err(Error::Config("eval.trials must be at least 1".into()));
        }
        Ok(())
    }

    /// Strict parse; unknown keys anywhere are a config error.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// The manifest file behind `data`, whether it names the file or its dir.
    pub fn manifest_path(&self) -> PathBuf {
        if self.data.is_dir() {
            self.data.join("manifest.json")
        } else {
            self.data.clone()
        }
    }

    pub fn write_snapshot(&self, out_dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(out_dir)?;
        let path = out_dir.join("config.resolved.json");
        let mut f = fs::File::create(&path)?;
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n")?;
        f.sync_all()?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_roundtrip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_keys_fail_at_any_level() {
        assert!(serde_json::from_str::<RunConfig>("{\"fooo\": 1}").is_err());
        assert!(serde_json::from_str::<RunConfig>("{\"train\": {\"momentum\": 0.9}}").is_err());
        assert!(
            serde_json::from_str::<RunConfig>("{\"network\": {\"depth\": 9}}").is_err(),
            "nested unknown key must be rejected"
        );
    }

    #[test]
    fn archive_extractor_requires_a_path() {
        let mut cfg = RunConfig::default();
        cfg.extractor.kind = ExtractorKind::Archive;
        assert!(cfg.validate().is_err());
        cfg.extractor.path = Some(PathBuf::from("weights.narc"));
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn snapshot_reloads_to_the_same_config() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        cfg.train.image_size = 64;
        cfg.eval.trials = 3;
        let path = cfg.write_snapshot(dir.path()).unwrap();
        let back = RunConfig::load(&path).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg: RunConfig =
            serde_json::from_str("{\"train\": {\"batch_size\": 4}, \"deterministic\": false}")
                .unwrap();
        assert_eq!(cfg.train.batch_size, 4);
        assert_eq!(cfg.train.lr0, 2e-4);
        assert_eq!(cfg.eval.trials, 5);
        assert!(!cfg.deterministic);
    }
}
