//! Lazy per-split readers over a dataset directory.

use std::path::{Path, PathBuf};

use image::RgbImage;

use super::io::{frame_path, read_color, read_pfm, DatasetManifest, Domain, Payload};
use super::render::DepthMap;
use crate::error::{ensure, Result};

/// Colour frames paired with depth, where depth may live in a separate
/// archive directory with the same layout.
#[derive(Debug, Clone)]
pub struct PairedSplit {
    color_root: PathBuf,
    depth_root: PathBuf,
    split: String,
    ids: Vec<u64>,
    image_size: u32,
}

impl PairedSplit {
    /// Colour and depth from the same labeled dataset.
    pub fn open(root: &Path, split: &str) -> Result<Self> {
        Self::open_with_archive(root, root, split)
    }

    /// Colour from `color_root` and depth from `depth_root`, matched by id.
    pub fn open_with_archive(color_root: &Path, depth_root: &Path, split: &str) -> Result<Self> {
        let cm = DatasetManifest::load(color_root)?;
        let dm = DatasetManifest::load(depth_root)?;
        ensure!(
            cm.has(Payload::Color),
            Data,
            "{} holds no colour frames",
            color_root.display()
        );
        ensure!(
            dm.has(Payload::Depth),
            Data,
            "{} holds no depth maps",
            depth_root.display()
        );
        let ids = cm.ids(split)?.to_vec();
        ensure!(
            ids == dm.ids(split)?,
            Data,
            "colour and depth ids of split {split:?} differ"
        );
        ensure!(
            cm.image_size == dm.image_size,
            Data,
            "colour and depth sizes differ"
        );
        Ok(PairedSplit {
            color_root: color_root.to_path_buf(),
            depth_root: depth_root.to_path_buf(),
            split: split.to_string(),
            ids,
            image_size: cm.image_size,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn image_size(&self) -> u32 {
        self.image_size
    }

    pub fn load(&self, index: usize) -> Result<(RgbImage, DepthMap)> {
        let id = self.ids[index];
        let color = read_color(&frame_path(
            &self.color_root,
            &self.split,
            Payload::Color,
            id,
        ))?;
        let depth = read_pfm(&frame_path(
            &self.depth_root,
            &self.split,
            Payload::Depth,
            id,
        ))?;
        Ok((color, depth))
    }
}

/// Colour-only frames of the unlabeled domain. There is no way to obtain
/// depth through this type.
#[derive(Debug, Clone)]
pub struct UnlabeledSplit {
    root: PathBuf,
    split: String,
    ids: Vec<u64>,
    image_size: u32,
}

impl UnlabeledSplit {
    pub fn open(root: &Path, split: &str) -> Result<Self> {
        let m = DatasetManifest::load(root)?;
        ensure!(
            m.has(Payload::Color),
            Data,
            "{} holds no colour frames",
            root.display()
        );
        Ok(UnlabeledSplit {
            root: root.to_path_buf(),
            split: split.to_string(),
            ids: m.ids(split)?.to_vec(),
            image_size: m.image_size,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn image_size(&self) -> u32 {
        self.image_size
    }

    pub fn load(&self, index: usize) -> Result<RgbImage> {
        read_color(&frame_path(
            &self.root,
            &self.split,
            Payload::Color,
            self.ids[index],
        ))
    }
}

/// Standard directory names produced by data generation.
#[derive(Debug, Clone)]
pub struct DataLayout {
    pub root: PathBuf,
}

impl DataLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DataLayout { root: root.into() }
    }

    pub fn synthetic(&self) -> PathBuf {
        self.root.join("synthetic")
    }

    pub fn real_like(&self) -> PathBuf {
        self.root.join("real_like")
    }

    /// Evaluation-only depth of the real-like test frames.
    pub fn real_like_depth(&self) -> PathBuf {
        self.root.join("real_like_depth")
    }

    pub fn domain_of(dir: &Path) -> Result<Domain> {
        Ok(DatasetManifest::load(dir)?.domain)
    }
}
