//! Random flips (applied jointly to colour and depth) and colour jitter.

use nalgebra::Matrix3;
use rand::Rng;
use serde::{Deserialize, Serialize};
use tch::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub flips: bool,
    pub color_jitter: bool,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flips: true,
            color_jitter: true,
            brightness: 0.2,
            contrast: 0.2,
            saturation: 0.2,
            hue: 0.05,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        AugmentConfig {
            flips: false,
            color_jitter: false,
            ..Default::default()
        }
    }

    pub fn flips_only() -> Self {
        AugmentConfig {
            color_jitter: false,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jitter {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

/// One drawn set of augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augmentation {
    pub hflip: bool,
    pub vflip: bool,
    pub jitter: Option<Jitter>,
}

fn factor(rng: &mut impl Rng, range: f64) -> f64 {
    if range > 0.0 {
        rng.gen_range((1.0 - range).max(0.0)..=1.0 + range)
    } else {
        1.0
    }
}

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Rotation of the chroma plane in YIQ space by `turns` of a full circle.
fn hue_matrix(turns: f64) -> Matrix3<f64> {
    let to_yiq = Matrix3::new(
        0.299, 0.587, 0.114, //
        0.596, -0.274, -0.322, //
        0.211, -0.523, 0.312,
    );
    let (s, c) = (turns * std::f64::consts::TAU).sin_cos();
    let rot = Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c);
    to_yiq.try_inverse().expect("invertible") * rot * to_yiq
}

fn grayscale(img: &Tensor) -> Tensor {
    img.get(0) * LUMA[0] + img.get(1) * LUMA[1] + img.get(2) * LUMA[2]
}

impl Augmentation {
    pub fn identity() -> Self {
        Augmentation {
            hflip: false,
            vflip: false,
            jitter: None,
        }
    }

    pub fn sample(cfg: &AugmentConfig, rng: &mut impl Rng) -> Self {
        let hflip = cfg.flips && rng.gen_bool(0.5);
        let vflip = cfg.flips && rng.gen_bool(0.5);
        let jitter = cfg.color_jitter.then(|| Jitter {
            brightness: factor(rng, cfg.brightness),
            contrast: factor(rng, cfg.contrast),
            saturation: factor(rng, cfg.saturation),
            hue: if cfg.hue > 0.0 {
                rng.gen_range(-cfg.hue..=cfg.hue)
            } else {
                0.0
            },
        });
        Augmentation {
            hflip,
            vflip,
            jitter,
        }
    }

    fn flip(&self, t: &Tensor) -> Tensor {
        let mut dims = Vec::new();
        if self.vflip {
            dims.push(1);
        }
        if self.hflip {
            dims.push(2);
        }
        if dims.is_empty() {
            t.shallow_clone()
        } else {
            t.flip(dims.as_slice())
        }
    }

    /// `[3, H, W]` colour in `[0, 1]`.
    pub fn apply_color(&self, img: &Tensor) -> Tensor {
        let mut x = self.flip(img);
        if let Some(j) = self.jitter {
            x = (x * j.brightness).clamp(0.0, 1.0);
            let mean = grayscale(&x).mean(None);
            x = (&x * j.contrast + mean * (1.0 - j.contrast)).clamp(0.0, 1.0);
            let gray = grayscale(&x).unsqueeze(0);
            x = (&x * j.saturation + gray * (1.0 - j.saturation)).clamp(0.0, 1.0);
            if j.hue != 0.0 {
                let m = hue_matrix(j.hue);
                let rows: Vec<f32> = (0..3)
                    .flat_map(|r| (0..3).map(move |c| (r, c)))
                    .map(|(r, c)| m[(r, c)] as f32)
                    .collect();
                let m = Tensor::from_slice(&rows).view([3, 3]).to_kind(x.kind());
                let (c, h, w) = x.size3().expect("[3, H, W]");
                x = m
                    .matmul(&x.view([c, h * w]))
                    .view([c, h, w])
                    .clamp(0.0, 1.0);
            }
        }
        x
    }

    /// `[1, H, W]` depth; only the geometric part applies.
    pub fn apply_depth(&self, depth: &Tensor) -> Tensor {
        self.flip(depth)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use tch::{Device, Kind};

    #[test]
    fn hue_rotation_preserves_gray() {
        let m = hue_matrix(0.05);
        let g = m * nalgebra::Vector3::new(0.4, 0.4, 0.4);
        for c in 0..3 {
            assert!((g[c] - 0.4).abs() < 1e-3);
        }
        assert!((hue_matrix(0.0) - Matrix3::identity()).abs().max() < 1e-9);
    }

    #[test]
    fn flips_move_colour_and_depth_together() {
        let aug = Augmentation {
            hflip: true,
            vflip: true,
            jitter: None,
        };
        let depth = Tensor::arange(12, (Kind::Float, Device::Cpu)).view([1, 3, 4]);
        let color = depth.repeat([3, 1, 1]);
        let fc = aug.apply_color(&color);
        let fd = aug.apply_depth(&depth);
        assert!(fc.get(1).equal(&fd.get(0)));
        assert_eq!(fd.double_value(&[0, 0, 0]), 11.0);
    }

    #[test]
    fn identity_leaves_input_untouched() {
        let img = Tensor::rand([3, 5, 5], (Kind::Float, Device::Cpu));
        assert!(Augmentation::identity().apply_color(&img).equal(&img));
    }

    #[test]
    fn jitter_stays_in_range() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let img = Tensor::rand([3, 8, 8], (Kind::Float, Device::Cpu));
        for _ in 0..20 {
            let a = Augmentation::sample(&AugmentConfig::default(), &mut rng);
            let out = a.apply_color(&img);
            assert!(out.min().double_value(&[]) >= 0.0 && out.max().double_value(&[]) <= 1.0);
        }
        let none = Augmentation::sample(&AugmentConfig::disabled(), &mut rng);
        assert_eq!(none, Augmentation::identity());
    }
}
