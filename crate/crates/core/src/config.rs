//! Experiment configuration and run-directory management.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ensure, Error, Result};
use crate::networks::ModelConfig;
use crate::pipeline::adapt::AdaptConfig;
use crate::pipeline::supervised::SupervisedConfig;
use crate::synthdata::DataConfig;

pub const RUNS_DIR_ENV: &str = "BRONCHODEPTH_RUNS_DIR";
pub const DEFAULT_RUNS_DIR: &str = "runs";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Rescale each prediction by the ratio of medians before scoring.
    pub median_scale: bool,
    pub batch_size: usize,
    /// Evaluate at most this many frames.
    pub max_frames: Option<usize>,
    /// Number of frames rendered into `depth_vis/`.
    pub vis_frames: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            median_scale: false,
            batch_size: 16,
            max_frames: None,
            vis_frames: 8,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.batch_size >= 1,
            Config,
            "eval.batch_size must be at least 1"
        );
        ensure!(
            self.max_frames != Some(0),
            Config,
            "eval.max_frames must be positive"
        );
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub supervised: SupervisedConfig,
    pub adapt: AdaptConfig,
    pub eval: EvalConfig,
    pub model: ModelConfig,
}

impl ExperimentConfig {
    /// Parses JSON text. Blank text yields the defaults.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = if text.trim().is_empty() {
            ExperimentConfig::default()
        } else {
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        ensure!(
            path.is_file(),
            Config,
            "config file {} does not exist",
            path.display()
        );
        let text = fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.supervised.validate()?;
        self.adapt.validate()?;
        self.eval.validate()?;
        self.model.validate()?;
        ensure!(
            i64::from(self.data.image_size) == self.model.input_size,
            Config,
            "data.image_size ({}) must equal model.input_size ({})",
            self.data.image_size,
            self.model.input_size
        );
        Ok(())
    }

    /// Sets every seed (data, supervised, adaptation).
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.data.seed = seed;
        self.supervised.seed = seed;
        self.adapt.seed = seed;
        self
    }

    /// JSON with object keys sorted at every level.
    pub fn canonical_json(&self) -> String {
        // serde_json's default map is ordered by key
        let value = serde_json::to_value(self).expect("config serializes");
        serde_json::to_string(&value).expect("value serializes")
    }

    /// Hex SHA-256 of [`ExperimentConfig::canonical_json`].
    pub fn config_hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    pub fn to_pretty_json(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        serde_json::to_string_pretty(&value).expect("value serializes")
    }
}

/// Root under which run directories are created.
pub fn runs_root() -> PathBuf {
    std::env::var_os(RUNS_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_RUNS_DIR))
}

/// `runs/<name>/{config.json, ckpts/, logs/train.jsonl, reports/}`.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Creates a fresh run directory; an existing non-empty directory is
    /// never reused.
    pub fn create(root: &Path, config: &ExperimentConfig) -> Result<RunDir> {
        if root.exists() {
            let mut entries = fs::read_dir(root).map_err(|e| Error::io_at(root, e))?;
            ensure!(
                entries.next().is_none(),
                Config,
                "run directory {} already exists; choose another --out",
                root.display()
            );
        }
        let run = RunDir {
            root: root.to_path_buf(),
        };
        for dir in [run.ckpts(), run.logs(), run.reports()] {
            fs::create_dir_all(&dir).map_err(|e| Error::io_at(&dir, e))?;
        }
        let path = run.config_path();
        fs::write(&path, config.to_pretty_json()).map_err(|e| Error::io_at(&path, e))?;
        Ok(run)
    }

    /// Opens an existing run for resumption; its config must match.
    pub fn reopen(root: &Path, config: &ExperimentConfig) -> Result<RunDir> {
        let run = RunDir {
            root: root.to_path_buf(),
        };
        let stored = ExperimentConfig::load(&run.config_path())?;
        ensure!(
            stored.config_hash() == config.config_hash(),
            Config,
            "configuration differs from the one stored in {}",
            root.display()
        );
        Ok(run)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn ckpts(&self) -> PathBuf {
        self.root.join("ckpts")
    }

    pub fn logs(&self) -> PathBuf {
        self.root.join("logs")
    }

    pub fn train_log(&self) -> PathBuf {
        self.logs().join("train.jsonl")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_default() {
        let cfg = ExperimentConfig::from_json("  \n").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.supervised.epochs, 30);
        assert_eq!(cfg.supervised.batch_size, 64);
        assert_eq!(cfg.supervised.lr, 1e-3);
        assert_eq!(cfg.supervised.betas, (0.9, 0.999));
        assert_eq!(cfg.adapt.iterations, 12_000);
        assert_eq!(cfg.adapt.lr, 5e-6);
        assert_eq!(cfg.supervised.berhu_k, 0.2);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in [
            r#"{"bogus": 1}"#,
            r#"{"supervised": {"epochz": 3}}"#,
            r#"{"model": {"x": 0}}"#,
        ] {
            let err = ExperimentConfig::from_json(text).unwrap_err();
            assert_eq!(err.category(), crate::ErrorCategory::Config, "{text}");
        }
    }

    #[test]
    fn negative_lr_is_rejected() {
        let err = ExperimentConfig::from_json(r#"{"supervised": {"lr": -1}}"#).unwrap_err();
        assert_eq!(err.category(), crate::ErrorCategory::Config);
        assert!(ExperimentConfig::from_json(r#"{"supervised": {"epochs": 0}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"adapt": {"iterations": 2}}"#).is_err());
    }

    #[test]
    fn image_size_must_match_model() {
        assert!(ExperimentConfig::from_json(r#"{"data": {"image_size": 128}}"#).is_err());
        let ok = r#"{"data": {"image_size": 128}, "model": {"input_size": 128}}"#;
        assert!(ExperimentConfig::from_json(ok).is_ok());
    }

    #[test]
    fn hash_ignores_key_order() {
        let a = ExperimentConfig::from_json(
            r#"{"supervised": {"epochs": 3, "lr": 0.01}, "adapt": {"lr": 1e-5}}"#,
        )
        .unwrap();
        let b = ExperimentConfig::from_json(
            r#"{"adapt": {"lr": 1e-5}, "supervised": {"lr": 0.01, "epochs": 3}}"#,
        )
        .unwrap();
        assert_eq!(a.config_hash(), b.config_hash());
        assert_ne!(a.config_hash(), ExperimentConfig::default().config_hash());
    }

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_json(&cfg.to_pretty_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.config_hash(), cfg.config_hash());
    }

    #[test]
    fn run_dir_is_never_reused() {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().join("r1");
        let cfg = ExperimentConfig::default();
        let run = RunDir::create(&root, &cfg).unwrap();
        assert!(run.ckpts().is_dir() && run.logs().is_dir() && run.reports().is_dir());
        assert!(run.config_path().is_file());
        assert!(RunDir::create(&root, &cfg).is_err());
        assert!(RunDir::reopen(&root, &cfg).is_ok());
        assert!(RunDir::reopen(&root, &cfg.clone().with_seed(3)).is_err());
    }
}
