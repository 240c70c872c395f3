//! On-disk dataset layout: `{split}/{color|depth}/{id:06}.{png|pfm}` plus a
//! `manifest.json` at the dataset root. Depth is stored as little-endian
//! single-channel PFM, colour as 8-bit PNG.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::render::{CameraIntrinsics, DepthMap};
use crate::error::{ensure, Error, Result};

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn write_pfm(path: &Path, depth: &DepthMap) -> Result<()> {
    let mut buf = Vec::with_capacity(depth.data().len() * 4 + 32);
    write!(buf, "Pf\n{} {}\n-1.0\n", depth.width(), depth.height())?;
    let w = depth.width() as usize;
    // PFM stores scanlines bottom to top
    for row in depth.data().chunks(w).rev() {
        for v in row {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io_at(path, e))
}

fn next_token(reader: &mut impl BufRead) -> Result<String> {
    let mut token = Vec::new();
    for byte in reader.bytes() {
        let b = byte?;
        if b.is_ascii_whitespace() {
            if token.is_empty() {
                continue;
            }
            return String::from_utf8(token).map_err(|_| Error::Data("invalid PFM header".into()));
        }
        token.push(b);
    }
    Err(Error::Data("truncated PFM header".into()))
}

pub fn read_pfm(path: &Path) -> Result<DepthMap> {
    let file = fs::File::open(path).map_err(|e| Error::io_at(path, e))?;
    let mut reader = BufReader::new(file);
    let magic = next_token(&mut reader)?;
    ensure!(
        magic == "Pf",
        Data,
        "{}: expected single-channel PFM, got {magic:?}",
        path.display()
    );
    let parse = |s: String| {
        s.parse::<u32>()
            .map_err(|_| Error::Data(format!("{}: bad PFM dimension {s:?}", path.display())))
    };
    let width = parse(next_token(&mut reader)?)?;
    let height = parse(next_token(&mut reader)?)?;
    let scale: f64 = next_token(&mut reader)?
        .parse()
        .map_err(|_| Error::Data(format!("{}: bad PFM scale", path.display())))?;
    ensure!(
        scale != 0.0,
        Data,
        "{}: PFM scale must be non-zero",
        path.display()
    );
    let mut raw = Vec::new();
    reader.read_to_end(&mut raw)?;
    let n = width as usize * height as usize;
    ensure!(
        raw.len() == n * 4,
        Data,
        "{}: expected {} bytes of samples, found {}",
        path.display(),
        n * 4,
        raw.len()
    );
    let decode = |c: &[u8]| {
        let b = [c[0], c[1], c[2], c[3]];
        if scale < 0.0 {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        }
    };
    let rows: Vec<Vec<f32>> = raw
        .chunks(width as usize * 4)
        .map(|row| row.chunks(4).map(decode).collect())
        .collect();
    let data = rows.into_iter().rev().flatten().collect();
    DepthMap::new(width, height, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Synthetic,
    RealLike,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    Color,
    Depth,
}

impl Payload {
    fn dir(self) -> &'static str {
        match self {
            Payload::Color => "color",
            Payload::Depth => "depth",
        }
    }

    fn ext(self) -> &'static str {
        match self {
            Payload::Color => "png",
            Payload::Depth => "pfm",
        }
    }
}

pub fn frame_path(root: &Path, split: &str, payload: Payload, id: u64) -> PathBuf {
    root.join(split)
        .join(payload.dir())
        .join(format!("{id:06}.{}", payload.ext()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub domain: Domain,
    pub payload: Vec<Payload>,
    pub image_size: u32,
    pub intrinsics: CameraIntrinsics,
    pub splits: BTreeMap<String, Vec<u64>>,
    pub counts: BTreeMap<String, usize>,
    /// `[min, max]` over every stored depth sample.
    pub depth_range_mm: Option<[f32; 2]>,
    pub split_seed: u64,
    pub generator_seed: u64,
}

impl DatasetManifest {
    pub fn has(&self, payload: Payload) -> bool {
        self.payload.contains(&payload)
    }

    pub fn ids(&self, split: &str) -> Result<&[u64]> {
        self.splits
            .get(split)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Data(format!("dataset has no split {split:?}")))
    }

    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io_at(&path, e))?;
        let m: DatasetManifest = serde_json::from_str(&text)?;
        ensure!(
            m.format_version == DATASET_FORMAT_VERSION,
            Data,
            "unsupported dataset format version {}",
            m.format_version
        );
        Ok(m)
    }
}

/// One stored frame; which fields are present follows the manifest payload.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFrame {
    pub id: u64,
    pub split: String,
    pub color: Option<RgbImage>,
    pub depth: Option<DepthMap>,
}

/// Shuffles `0..n` with `seed` and returns `(train, val)` with
/// `round(n * val_fraction)` validation ids, both sorted.
pub fn split_ids(n: u64, val_fraction: f64, seed: u64) -> Result<(Vec<u64>, Vec<u64>)> {
    ensure!(
        (0.0..1.0).contains(&val_fraction),
        Config,
        "validation fraction must lie in [0, 1), got {val_fraction}"
    );
    let mut ids: Vec<u64> = (0..n).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = (n as f64 * val_fraction).round() as usize;
    let mut val = ids[..n_val].to_vec();
    let mut train = ids[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

/// Incrementally writes a dataset directory; the manifest is written last.
#[derive(Debug)]
pub struct DatasetWriter {
    root: PathBuf,
    manifest: DatasetManifest,
}

impl DatasetWriter {
    pub fn create(
        root: &Path,
        domain: Domain,
        payload: Vec<Payload>,
        intrinsics: CameraIntrinsics,
        split_seed: u64,
        generator_seed: u64,
    ) -> Result<Self> {
        ensure!(
            !root.join(MANIFEST_FILE).exists(),
            Data,
            "refusing to overwrite existing dataset at {}",
            root.display()
        );
        fs::create_dir_all(root).map_err(|e| Error::io_at(root, e))?;
        Ok(DatasetWriter {
            root: root.to_path_buf(),
            manifest: DatasetManifest {
                format_version: DATASET_FORMAT_VERSION,
                domain,
                payload,
                image_size: intrinsics.width,
                intrinsics,
                splits: BTreeMap::new(),
                counts: BTreeMap::new(),
                depth_range_mm: None,
                split_seed,
                generator_seed,
            },
        })
    }

    pub fn add(&mut self, frame: &DatasetFrame) -> Result<()> {
        let m = &mut self.manifest;
        for payload in [Payload::Color, Payload::Depth] {
            let present = match payload {
                Payload::Color => frame.color.is_some(),
                Payload::Depth => frame.depth.is_some(),
            };
            ensure!(
                present == m.payload.contains(&payload),
                Data,
                "frame {} payload does not match the dataset schema {:?}",
                frame.id,
                m.payload
            );
        }
        let dir_of = |p: &Path| p.parent().map(Path::to_path_buf).unwrap_or_default();
        if let Some(color) = &frame.color {
            ensure!(
                color.dimensions() == (m.image_size, m.image_size),
                Data,
                "frame {} is {:?}, dataset is {}x{}",
                frame.id,
                color.dimensions(),
                m.image_size,
                m.image_size
            );
            let path = frame_path(&self.root, &frame.split, Payload::Color, frame.id);
            fs::create_dir_all(dir_of(&path)).map_err(|e| Error::io_at(&path, e))?;
            color.save_with_format(&path, image::ImageFormat::Png)?;
        }
        if let Some(depth) = &frame.depth {
            let path = frame_path(&self.root, &frame.split, Payload::Depth, frame.id);
            fs::create_dir_all(dir_of(&path)).map_err(|e| Error::io_at(&path, e))?;
            write_pfm(&path, depth)?;
            let (lo, hi) = depth.min_max();
            m.depth_range_mm = Some(match m.depth_range_mm {
                Some([a, b]) => [a.min(lo), b.max(hi)],
                None => [lo, hi],
            });
        }
        m.splits
            .entry(frame.split.clone())
            .or_default()
            .push(frame.id);
        *m.counts.entry(frame.split.clone()).or_default() += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<DatasetManifest> {
        for ids in self.manifest.splits.values_mut() {
            ids.sort_unstable();
        }
        let path = self.root.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(&path, text + "\n").map_err(|e| Error::io_at(&path, e))?;
        Ok(self.manifest)
    }
}

pub fn write_dataset(
    root: &Path,
    domain: Domain,
    payload: Vec<Payload>,
    intrinsics: CameraIntrinsics,
    split_seed: u64,
    frames: &[DatasetFrame],
) -> Result<DatasetManifest> {
    let mut writer = DatasetWriter::create(root, domain, payload, intrinsics, split_seed, 0)?;
    for f in frames {
        writer.add(f)?;
    }
    writer.finish()
}

pub fn read_color(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path)?.into_rgb8())
}

/// Loads every frame of every split listed in the manifest.
pub fn read_dataset(root: &Path) -> Result<(DatasetManifest, Vec<DatasetFrame>)> {
    let m = DatasetManifest::load(root)?;
    let mut frames = Vec::new();
    for (split, ids) in &m.splits {
        for &id in ids {
            let color = m
                .has(Payload::Color)
                .then(|| read_color(&frame_path(root, split, Payload::Color, id)))
                .transpose()?;
            let depth = m
                .has(Payload::Depth)
                .then(|| read_pfm(&frame_path(root, split, Payload::Depth, id)))
                .transpose()?;
            frames.push(DatasetFrame {
                id,
                split: split.clone(),
                color,
                depth,
            });
        }
    }
    Ok((m, frames))
}
