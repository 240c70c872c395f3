//! Procedural airway phantom: tree generation, analytic rendering of paired
//! colour/depth frames, degradation into an unlabeled second domain, and
//! dataset IO.

pub mod dataset;
pub mod degrade;
pub mod io;
pub mod render;
pub mod trajectory;
pub mod tree;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ensure, Result};

pub use dataset::{DataLayout, PairedSplit, UnlabeledSplit};
pub use degrade::{degrade_to_real_like, DegradeConfig, UnlabeledFrame};
pub use io::{
    read_dataset, read_pfm, split_ids, write_dataset, write_pfm, DatasetFrame, DatasetManifest,
    Domain, Payload,
};
pub use render::{
    render_frame, CameraIntrinsics, DepthMap, Pose, RenderedFrame, Scene, ShadingConfig,
};
pub use trajectory::{sample_pose, PoseJitter};
pub use tree::{generate_tree, AirwayTree, Branch, TreeParams};

pub const SPLIT_TRAIN: &str = "train";
pub const SPLIT_VAL: &str = "val";
pub const SPLIT_TEST: &str = "test";

/// Derives an independent 64-bit seed for a labelled sub-stream.
pub fn derive_seed(seed: u64, label: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub seed: u64,
    pub split_seed: u64,
    pub image_size: u32,
    pub tree_levels: usize,
    pub tree: TreeParams,
    pub synthetic_frames: usize,
    pub val_fraction: f64,
    pub real_train_frames: usize,
    pub real_test_frames: usize,
    pub shading: ShadingConfig,
    /// Illumination of the second domain before degradation.
    pub real_shading: ShadingConfig,
    pub degrade: DegradeConfig,
    pub max_tilt_deg: f64,
    pub max_offset: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            seed: 0,
            split_seed: 0,
            image_size: 256,
            tree_levels: 4,
            tree: TreeParams::default(),
            synthetic_frames: 2500,
            val_fraction: 0.2,
            real_train_frames: 1000,
            real_test_frames: 500,
            shading: ShadingConfig::default(),
            real_shading: ShadingConfig {
                specular: 0.6,
                shininess: 10.0,
                falloff_mm: 20.0,
                ..ShadingConfig::default()
            },
            degrade: DegradeConfig::default(),
            max_tilt_deg: PoseJitter::default().max_tilt_deg,
            max_offset: PoseJitter::default().max_offset,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.image_size >= 8, Config, "data.image_size too small");
        ensure!(
            self.synthetic_frames >= 1,
            Config,
            "data.synthetic_frames must be >= 1"
        );
        ensure!(
            (0.0..1.0).contains(&self.val_fraction),
            Config,
            "data.val_fraction must lie in [0, 1)"
        );
        ensure!(
            (0.0..90.0).contains(&self.max_tilt_deg) && (0.0..1.0).contains(&self.max_offset),
            Config,
            "data pose jitter out of range"
        );
        self.degrade.validate()?;
        generate_tree(self.seed, self.tree_levels, &self.tree)?;
        Ok(())
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics::for_size(self.image_size)
    }

    pub fn jitter(&self) -> PoseJitter {
        PoseJitter {
            max_tilt_deg: self.max_tilt_deg,
            max_offset: self.max_offset,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub synthetic: DatasetManifest,
    pub real_like: DatasetManifest,
    pub real_like_depth: DatasetManifest,
}

/// Renders the synthetic (labeled) set, the real-like (colour only) set and
/// the archived real-like test depth into `layout`.
pub fn generate_datasets(cfg: &DataConfig, layout: &DataLayout) -> Result<GeneratedData> {
    cfg.validate()?;
    let tree = generate_tree(cfg.seed, cfg.tree_levels, &cfg.tree)?;
    let scene = Scene::from_tree(&tree);
    let cam = cfg.intrinsics();
    let jitter = cfg.jitter();

    let (train, val) = split_ids(
        cfg.synthetic_frames as u64,
        cfg.val_fraction,
        cfg.split_seed,
    )?;
    let mut synth = io::DatasetWriter::create(
        &layout.synthetic(),
        Domain::Synthetic,
        vec![Payload::Color, Payload::Depth],
        cam,
        cfg.split_seed,
        cfg.seed,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "synthetic-poses", 0));
    let val_set: std::collections::BTreeSet<u64> = val.iter().copied().collect();
    for id in 0..cfg.synthetic_frames as u64 {
        let pose = sample_pose(&tree, &scene, &jitter, &mut rng)?;
        let frame = scene.render(&pose, &cam, &cfg.shading)?;
        let split = if val_set.contains(&id) {
            SPLIT_VAL
        } else {
            SPLIT_TRAIN
        };
        synth.add(&DatasetFrame {
            id,
            split: split.into(),
            color: Some(frame.color),
            depth: Some(frame.depth),
        })?;
    }
    debug_assert_eq!(train.len() + val.len(), cfg.synthetic_frames);
    let synthetic = synth.finish()?;

    let mut real = io::DatasetWriter::create(
        &layout.real_like(),
        Domain::RealLike,
        vec![Payload::Color],
        cam,
        cfg.split_seed,
        cfg.seed,
    )?;
    let mut archive = io::DatasetWriter::create(
        &layout.real_like_depth(),
        Domain::RealLike,
        vec![Payload::Depth],
        cam,
        cfg.split_seed,
        cfg.seed,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "real-poses", 0));
    let total = (cfg.real_train_frames + cfg.real_test_frames) as u64;
    for id in 0..total {
        let pose = sample_pose(&tree, &scene, &jitter, &mut rng)?;
        let frame = scene.render(&pose, &cam, &cfg.real_shading)?;
        let (unlabeled, depth) =
            degrade_to_real_like(&frame, &cfg.degrade, derive_seed(cfg.seed, "noise", id));
        let split = if id < cfg.real_train_frames as u64 {
            SPLIT_TRAIN
        } else {
            SPLIT_TEST
        };
        real.add(&DatasetFrame {
            id,
            split: split.into(),
            color: Some(unlabeled.color),
            depth: None,
        })?;
        if split == SPLIT_TEST {
            archive.add(&DatasetFrame {
                id,
                split: split.into(),
                color: None,
                depth: Some(depth),
            })?;
        }
    }
    Ok(GeneratedData {
        synthetic,
        real_like: real.finish()?,
        real_like_depth: archive.finish()?,
    })
}

/// Generates into `root` only if it does not already hold a dataset.
pub fn ensure_datasets(cfg: &DataConfig, root: &Path) -> Result<DataLayout> {
    let layout = DataLayout::new(root);
    if !layout.synthetic().join(io::MANIFEST_FILE).exists() {
        generate_datasets(cfg, &layout)?;
    }
    Ok(layout)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DataConfig {
        DataConfig {
            image_size: 32,
            synthetic_frames: 10,
            real_train_frames: 4,
            real_test_frames: 3,
            ..Default::default()
        }
    }

    #[test]
    fn generates_three_consistent_datasets() {
        let dir = tempfile::tempdir().unwrap();
        let layout = DataLayout::new(dir.path());
        let g = generate_datasets(&small(), &layout).unwrap();
        assert_eq!(g.synthetic.counts[SPLIT_TRAIN], 8);
        assert_eq!(g.synthetic.counts[SPLIT_VAL], 2);
        assert_eq!(g.real_like.counts[SPLIT_TRAIN], 4);
        assert_eq!(g.real_like.counts[SPLIT_TEST], 3);
        assert!(!g.real_like.has(Payload::Depth));
        assert!(!layout.real_like().join(SPLIT_TRAIN).join("depth").exists());
        let [lo, hi] = g.synthetic.depth_range_mm.unwrap();
        assert!(lo > 0.0 && hi > lo);

        let eval = PairedSplit::open_with_archive(
            &layout.real_like(),
            &layout.real_like_depth(),
            SPLIT_TEST,
        )
        .unwrap();
        assert_eq!(eval.len(), 3);
        let (c, d) = eval.load(0).unwrap();
        assert_eq!(c.dimensions(), (32, 32));
        assert_eq!(d.width(), 32);
        assert!(UnlabeledSplit::open(&layout.real_like(), SPLIT_TRAIN)
            .unwrap()
            .load(0)
            .is_ok());
    }

    #[test]
    fn derived_seeds_differ_by_label_and_index() {
        assert_ne!(derive_seed(1, "a", 0), derive_seed(1, "b", 0));
        assert_ne!(derive_seed(1, "a", 0), derive_seed(1, "a", 1));
        assert_eq!(derive_seed(1, "a", 2), derive_seed(1, "a", 2));
    }
}
