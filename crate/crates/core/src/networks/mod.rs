//! Encoder-decoder with coordinate convolutions, multi-scale heads and the
//! feature-level patch discriminators.

pub mod coordconv;
pub mod decoder;
pub mod discriminator;
pub mod encoder;
pub mod init;

use serde::{Deserialize, Serialize};
use tch::Tensor;

use crate::error::{ensure, Result};

pub use coordconv::CoordConv;
pub use decoder::Decoder;
pub use discriminator::{Discriminators, PatchDiscriminator};
pub use encoder::Encoder;

/// Output scale ratios relative to the input, finest first.
pub const SCALES: [i64; 4] = [1, 2, 4, 8];
/// Channel widths of the five pyramid levels (strides 2, 4, 8, 16, 32).
pub const PYRAMID_CHANNELS: [i64; 5] = [64, 64, 128, 256, 512];
/// Pyramid indices feeding the three discriminators: the last two skips
/// and the bottleneck.
pub const ADVERSARIAL_LEVELS: [usize; 3] = [2, 3, 4];
pub const ADVERSARIAL_CHANNELS: [i64; 3] = [128, 256, 512];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Square input side in pixels. Must be a multiple of 32 and at least
    /// 128 so the bottleneck discriminator has a non-empty output.
    pub input_size: i64,
    pub coordconv_kernel: i64,
    pub decoder_channels: [i64; 5],
    pub disc_k3_stride: i64,
    pub leaky_slope: f64,
    /// Initial bias of the depth heads, in millimetres.
    pub depth_bias_init_mm: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_size: 256,
            coordconv_kernel: 1,
            decoder_channels: [16, 32, 64, 128, 256],
            disc_k3_stride: 1,
            leaky_slope: 0.2,
            depth_bias_init_mm: 10.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.input_size >= 128 && self.input_size % 32 == 0,
            Config,
            "model.input_size must be a multiple of 32 and >= 128, got {}",
            self.input_size
        );
        ensure!(
            self.coordconv_kernel >= 1 && self.coordconv_kernel % 2 == 1,
            Config,
            "model.coordconv_kernel must be odd and positive"
        );
        ensure!(
            self.decoder_channels.iter().all(|&c| c > 0),
            Config,
            "model.decoder_channels must be positive"
        );
        ensure!(
            matches!(self.disc_k3_stride, 1 | 2),
            Config,
            "model.disc_k3_stride must be 1 or 2"
        );
        ensure!(
            self.leaky_slope >= 0.0 && self.leaky_slope < 1.0,
            Config,
            "model.leaky_slope must lie in [0, 1)"
        );
        ensure!(
            self.depth_bias_init_mm.is_finite() && self.depth_bias_init_mm >= 0.0,
            Config,
            "model.depth_bias_init_mm must be finite and non-negative"
        );
        Ok(())
    }
}

/// Encoder activations, finest level first.
#[derive(Debug)]
pub struct FeaturePyramid {
    levels: Vec<Tensor>,
}

impl FeaturePyramid {
    pub fn new(levels: Vec<Tensor>) -> Self {
        assert_eq!(
            levels.len(),
            PYRAMID_CHANNELS.len(),
            "pyramid must have 5 levels"
        );
        FeaturePyramid { levels }
    }

    pub fn levels(&self) -> &[Tensor] {
        &self.levels
    }

    /// Features for discriminator `i` in 0..3.
    pub fn adversarial(&self, i: usize) -> &Tensor {
        &self.levels[ADVERSARIAL_LEVELS[i]]
    }

    pub fn detach(&self) -> FeaturePyramid {
        FeaturePyramid {
            levels: self.levels.iter().map(Tensor::detach).collect(),
        }
    }
}

#[derive(Debug)]
pub struct ScaleOutput {
    pub scale: i64,
    pub depth: Tensor,
    pub confidence: Tensor,
}

/// One (depth, confidence) pair per scale in [`SCALES`], finest first.
#[derive(Debug)]
pub struct MultiScaleOutput {
    outputs: Vec<ScaleOutput>,
}

impl MultiScaleOutput {
    pub fn new(outputs: Vec<ScaleOutput>) -> Result<Self> {
        let scales: Vec<i64> = outputs.iter().map(|o| o.scale).collect();
        ensure!(
            scales == SCALES,
            Contract,
            "multi-scale output must hold scales {SCALES:?} in order, got {scales:?}"
        );
        Ok(MultiScaleOutput { outputs })
    }

    pub fn scales(&self) -> &[ScaleOutput] {
        &self.outputs
    }

    pub fn get(&self, scale: i64) -> Option<&ScaleOutput> {
        self.outputs.iter().find(|o| o.scale == scale)
    }

    /// Full-resolution (h = 1) prediction.
    pub fn finest(&self) -> &ScaleOutput {
        &self.outputs[0]
    }

    pub fn into_finest(mut self) -> ScaleOutput {
        self.outputs.swap_remove(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tch::{Device, Kind};

    #[test]
    fn default_config_is_valid() {
        ModelConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_small_or_misaligned_inputs() {
        for size in [64, 100, 250] {
            let cfg = ModelConfig {
                input_size: size,
                ..Default::default()
            };
            assert!(cfg.validate().is_err(), "{size}");
        }
    }

    #[test]
    fn multiscale_requires_every_scale() {
        let t = || Tensor::zeros([1, 1, 2, 2], (Kind::Float, Device::Cpu));
        let outs = [1, 2, 4]
            .iter()
            .map(|&s| ScaleOutput {
                scale: s,
                depth: t(),
                confidence: t(),
            })
            .collect();
        assert!(MultiScaleOutput::new(outs).is_err());
    }
}
