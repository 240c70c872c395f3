//! Appearance degradation that turns a synthetic rendering into an
//! unlabeled "real-like" frame: optical blur, vignetting, highlight
//! saturation, a colour cast and sensor noise.

use image::{imageops, Rgb, RgbImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::render::{CameraIntrinsics, DepthMap, Pose, RenderedFrame};
use crate::error::{ensure, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DegradeConfig {
    /// Gaussian blur sigma in pixels.
    pub blur_sigma: f64,
    /// Relative darkening at the image corners.
    pub vignette: f64,
    /// Intensities above this level are pushed towards saturation.
    pub highlight_threshold: f64,
    pub highlight_gain: f64,
    /// Per-channel multiplicative colour cast.
    pub color_cast: [f64; 3],
    pub noise_std: f64,
}

impl Default for DegradeConfig {
    fn default() -> Self {
        DegradeConfig {
            blur_sigma: 1.5,
            vignette: 0.45,
            highlight_threshold: 0.6,
            highlight_gain: 2.5,
            color_cast: [1.1, 0.8, 0.7],
            noise_std: 0.02,
        }
    }
}

impl DegradeConfig {
    /// The identity degradation.
    pub fn none() -> Self {
        DegradeConfig {
            blur_sigma: 0.0,
            vignette: 0.0,
            highlight_threshold: 1.0,
            highlight_gain: 0.0,
            color_cast: [1.0; 3],
            noise_std: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.blur_sigma >= 0.0, Config, "blur_sigma must be >= 0");
        ensure!(
            (0.0..=1.0).contains(&self.vignette),
            Config,
            "vignette must lie in [0, 1]"
        );
        ensure!(
            (0.0..=1.0).contains(&self.highlight_threshold) && self.highlight_gain >= 0.0,
            Config,
            "highlight threshold must lie in [0, 1] and gain must be >= 0"
        );
        ensure!(
            self.color_cast.iter().all(|c| *c >= 0.0),
            Config,
            "color cast factors must be >= 0"
        );
        ensure!(self.noise_std >= 0.0, Config, "noise_std must be >= 0");
        Ok(())
    }
}

/// A frame of the unlabeled domain. It has no depth field at all.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledFrame {
    pub color: RgbImage,
    pub pose: Pose,
    pub intrinsics: CameraIntrinsics,
}

/// Returns the degraded colour frame and, separately, the depth that was
/// dropped from it (kept only for evaluation).
pub fn degrade_to_real_like(
    frame: &RenderedFrame,
    cfg: &DegradeConfig,
    seed: u64,
) -> (UnlabeledFrame, DepthMap) {
    let blurred = if cfg.blur_sigma > 0.0 {
        imageops::blur(&frame.color, cfg.blur_sigma as f32)
    } else {
        frame.color.clone()
    };
    let (w, h) = blurred.dimensions();
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let corner = (cx * cx + cy * cy).sqrt().max(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, cfg.noise_std.max(0.0)).expect("finite std");
    let mut out = RgbImage::new(w, h);
    for (u, v, px) in blurred.enumerate_pixels() {
        let r = ((u as f64 - cx).powi(2) + (v as f64 - cy).powi(2)).sqrt() / corner;
        let shade = 1.0 - cfg.vignette * r * r;
        let mut rgb = [0u8; 3];
        for c in 0..3 {
            let mut x = px[c] as f64 / 255.0;
            if x > cfg.highlight_threshold {
                x += cfg.highlight_gain * (x - cfg.highlight_threshold);
            }
            x *= cfg.color_cast[c] * shade;
            if cfg.noise_std > 0.0 {
                x += noise.sample(&mut rng);
            }
            rgb[c] = (x.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
        out.put_pixel(u, v, Rgb(rgb));
    }
    let unlabeled = UnlabeledFrame {
        color: out,
        pose: frame.pose,
        intrinsics: frame.intrinsics,
    };
    (unlabeled, frame.depth.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::render::{render_frame, ShadingConfig};
    use crate::synthdata::tree::{generate_tree, TreeParams, Vec3};

    fn frame() -> RenderedFrame {
        let tree = generate_tree(0, 2, &TreeParams::default()).unwrap();
        let pose = Pose::looking_along(Vec3::new(0.0, 0.0, 30.0), Vec3::z(), 0.0);
        render_frame(
            &tree,
            &pose,
            &CameraIntrinsics::for_size(32),
            &ShadingConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn zero_strength_is_identity() {
        let f = frame();
        let (u, depth) = degrade_to_real_like(&f, &DegradeConfig::none(), 3);
        assert_eq!(u.color, f.color);
        assert_eq!(depth, f.depth);
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let f = frame();
        let cfg = DegradeConfig::default();
        assert_eq!(
            degrade_to_real_like(&f, &cfg, 9).0,
            degrade_to_real_like(&f, &cfg, 9).0
        );
        assert_ne!(
            degrade_to_real_like(&f, &cfg, 9).0,
            degrade_to_real_like(&f, &cfg, 10).0
        );
    }

    #[test]
    fn keeps_dimensions_and_camera() {
        let f = frame();
        let (u, _) = degrade_to_real_like(&f, &DegradeConfig::default(), 1);
        assert_eq!(u.color.dimensions(), f.color.dimensions());
        assert_eq!(u.pose, f.pose);
        assert_eq!(u.intrinsics, f.intrinsics);
        assert_ne!(u.color, f.color);
    }
}
