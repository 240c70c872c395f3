//! Checkpoint directories: one safetensors file per component plus a JSON
//! manifest that identifies what was trained and under which config.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tch::nn::VarStore;

use super::adam::Adam;
use crate::error::{ensure, Error, Result};
use crate::networks::ModelConfig;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

pub const ROLE_ENCODER_SYNTHETIC: &str = "encoder_synthetic";
pub const ROLE_ENCODER_REAL: &str = "encoder_real";
pub const ROLE_DECODER: &str = "decoder";
pub const ROLE_DISCRIMINATORS: &str = "discriminators";
pub const ROLE_OPTIM_SUPERVISED: &str = "optim_supervised";
pub const ROLE_OPTIM_ENCODER: &str = "optim_encoder";
pub const ROLE_OPTIM_DISCRIMINATORS: &str = "optim_discriminators";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainingStep {
    Supervised,
    Adapted,
}

impl TrainingStep {
    /// Name of the encoder+decoder pair used for real-domain inference.
    pub fn module_name(self) -> &'static str {
        match self {
            TrainingStep::Supervised => "encoder_synthetic+decoder",
            TrainingStep::Adapted => "encoder_real+decoder",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub module_name: String,
    pub step: TrainingStep,
    pub iteration: u64,
    pub rng_seed: u64,
    pub config_hash: String,
    pub model: ModelConfig,
    /// role -> file name relative to the checkpoint directory
    pub files: BTreeMap<String, String>,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
}

/// A component to persist under a role name.
pub enum Component<'a> {
    Weights(&'a VarStore),
    Optimizer(&'a Adam),
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    dir: PathBuf,
    manifest: CheckpointManifest,
}

impl Checkpoint {
    /// Writes all components, then the manifest, into `dir`. An existing
    /// checkpoint at `dir` is replaced only after the new one is complete.
    #[allow(clippy::too_many_arguments)]
    pub fn save(
        dir: &Path,
        step: TrainingStep,
        iteration: u64,
        rng_seed: u64,
        config_hash: &str,
        model: &ModelConfig,
        components: &[(&str, Component<'_>)],
        metrics: BTreeMap<String, f64>,
    ) -> Result<Checkpoint> {
        let name = dir
            .file_name()
            .ok_or_else(|| Error::Config(format!("invalid checkpoint path {}", dir.display())))?
            .to_string_lossy()
            .into_owned();
        let parent = dir.parent().unwrap_or(Path::new("."));
        fs::create_dir_all(parent).map_err(|e| Error::io_at(parent, e))?;
        let staging = parent.join(format!(".{name}.partial"));
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| Error::io_at(&staging, e))?;
        }
        fs::create_dir_all(&staging).map_err(|e| Error::io_at(&staging, e))?;

        let mut files = BTreeMap::new();
        for (role, component) in components {
            let file = format!("{role}.safetensors");
            let path = staging.join(&file);
            match component {
                Component::Weights(vs) => vs.save(&path)?,
                Component::Optimizer(opt) => opt.save(&path)?,
            }
            files.insert(role.to_string(), file);
        }
        let manifest = CheckpointManifest {
            format_version: CHECKPOINT_FORMAT_VERSION,
            module_name: step.module_name().to_string(),
            step,
            iteration,
            rng_seed,
            config_hash: config_hash.to_string(),
            model: model.clone(),
            files,
            metrics,
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        let manifest_path = staging.join(MANIFEST_FILE);
        fs::write(&manifest_path, text).map_err(|e| Error::io_at(&manifest_path, e))?;

        if dir.exists() {
            fs::remove_dir_all(dir).map_err(|e| Error::io_at(dir, e))?;
        }
        fs::rename(&staging, dir).map_err(|e| Error::io_at(dir, e))?;
        Ok(Checkpoint {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn open(dir: &Path) -> Result<Checkpoint> {
        let path = dir.join(MANIFEST_FILE);
        ensure!(
            path.is_file(),
            Config,
            "{} is not a checkpoint (no {MANIFEST_FILE})",
            dir.display()
        );
        let text = fs::read_to_string(&path).map_err(|e| Error::io_at(&path, e))?;
        let manifest: CheckpointManifest = serde_json::from_str(&text).map_err(|e| {
            Error::Data(format!(
                "malformed checkpoint manifest {}: {e}",
                path.display()
            ))
        })?;
        ensure!(
            manifest.format_version == CHECKPOINT_FORMAT_VERSION,
            Data,
            "unsupported checkpoint format {} in {}",
            manifest.format_version,
            dir.display()
        );
        manifest.model.validate()?;
        for file in manifest.files.values() {
            let p = dir.join(file);
            ensure!(
                p.is_file(),
                Data,
                "checkpoint file {} is missing",
                p.display()
            );
        }
        Ok(Checkpoint {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &CheckpointManifest {
        &self.manifest
    }

    pub fn has(&self, role: &str) -> bool {
        self.manifest.files.contains_key(role)
    }

    pub fn path_of(&self, role: &str) -> Result<PathBuf> {
        self.manifest
            .files
            .get(role)
            .map(|f| self.dir.join(f))
            .ok_or_else(|| Error::Data(format!("checkpoint {} has no {role}", self.dir.display())))
    }

    pub fn load_weights(&self, role: &str, vs: &mut VarStore) -> Result<()> {
        let path = self.path_of(role)?;
        vs.load(&path)
            .map_err(|e| Error::Data(format!("cannot load {role} from {}: {e}", path.display())))
    }

    pub fn load_optimizer(&self, role: &str, opt: &mut Adam) -> Result<()> {
        opt.load(&self.path_of(role)?)
    }
}
