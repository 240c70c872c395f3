//! Skip-connected decoder with nearest-neighbour upsampling and per-scale
//! depth/confidence heads.

use tch::{nn, nn::Module, Device, Tensor};

use super::init::{self, Init};
use super::{FeaturePyramid, ModelConfig, MultiScaleOutput, ScaleOutput, PYRAMID_CHANNELS};

/// Confidence is kept strictly inside (0, 1) even where the sigmoid
/// saturates in single precision.
pub const CONFIDENCE_MARGIN: f64 = 1e-6;

/// Reflection pad by one pixel followed by a 3x3 convolution.
#[derive(Debug)]
struct ReflectConv {
    conv: nn::Conv2D,
}

impl ReflectConv {
    fn new(p: nn::Path, c_in: i64, c_out: i64) -> Self {
        ReflectConv {
            conv: nn::conv2d(p, c_in, c_out, 3, Default::default()),
        }
    }
}

impl Module for ReflectConv {
    fn forward(&self, x: &Tensor) -> Tensor {
        x.reflection_pad2d([1, 1, 1, 1]).apply(&self.conv)
    }
}

#[derive(Debug)]
struct DecoderNet {
    upconv_pre: Vec<ReflectConv>,
    upconv_post: Vec<ReflectConv>,
    depth_heads: Vec<ReflectConv>,
    confidence_heads: Vec<ReflectConv>,
}

impl DecoderNet {
    fn new(p: &nn::Path, cfg: &ModelConfig) -> Self {
        let ch = cfg.decoder_channels;
        let mut upconv_pre = Vec::new();
        let mut upconv_post = Vec::new();
        for level in 0..5 {
            let c_in = if level == 4 {
                PYRAMID_CHANNELS[4]
            } else {
                ch[level + 1]
            };
            upconv_pre.push(ReflectConv::new(
                p / format!("upconv{level}_0"),
                c_in,
                ch[level],
            ));
            let skip = if level > 0 {
                PYRAMID_CHANNELS[level - 1]
            } else {
                0
            };
            upconv_post.push(ReflectConv::new(
                p / format!("upconv{level}_1"),
                ch[level] + skip,
                ch[level],
            ));
        }
        let depth_heads = (0..4)
            .map(|l| ReflectConv::new(p / format!("depth{l}"), ch[l], 1))
            .collect();
        let confidence_heads = (0..4)
            .map(|l| ReflectConv::new(p / format!("confidence{l}"), ch[l], 1))
            .collect();
        DecoderNet {
            upconv_pre,
            upconv_post,
            depth_heads,
            confidence_heads,
        }
    }

    fn forward(&self, pyr: &FeaturePyramid) -> MultiScaleOutput {
        let levels = pyr.levels();
        let mut x = levels[4].shallow_clone();
        let mut outputs = Vec::with_capacity(4);
        for level in (0..5).rev() {
            x = self.upconv_pre[level].forward(&x).elu();
            let (_, _, h, w) = x.size4().expect("rank-4 features");
            x = x.upsample_nearest2d([h * 2, w * 2], None, None);
            if level > 0 {
                x = Tensor::cat(&[&x, &levels[level - 1]], 1);
            }
            x = self.upconv_post[level].forward(&x).elu();
            if level < 4 {
                let depth = self.depth_heads[level].forward(&x).relu();
                let confidence = self.confidence_heads[level]
                    .forward(&x)
                    .sigmoid()
                    .clamp(CONFIDENCE_MARGIN, 1.0 - CONFIDENCE_MARGIN);
                outputs.push(ScaleOutput {
                    scale: 1 << level,
                    depth,
                    confidence,
                });
            }
        }
        outputs.sort_by_key(|o| o.scale);
        MultiScaleOutput::new(outputs).expect("decoder emits every scale")
    }
}

/// Depth/confidence decoder (G_S).
#[derive(Debug)]
pub struct Decoder {
    vs: nn::VarStore,
    net: DecoderNet,
    config: ModelConfig,
}

impl Decoder {
    pub fn new(config: &ModelConfig, seed: u64) -> Self {
        let vs = nn::VarStore::new(Device::Cpu);
        let net = DecoderNet::new(&vs.root(), config);
        let depth_bias = config.depth_bias_init_mm;
        init::initialize(&vs, seed, |name, shape| {
            if name.starts_with("depth") && name.ends_with(".bias") {
                Init::Const(depth_bias)
            } else {
                init::default_rule(name, shape)
            }
        });
        Decoder {
            vs,
            net,
            config: config.clone(),
        }
    }

    pub fn forward(&self, pyr: &FeaturePyramid) -> MultiScaleOutput {
        self.net.forward(pyr)
    }

    pub fn var_store(&self) -> &nn::VarStore {
        &self.vs
    }

    pub fn var_store_mut(&mut self) -> &mut nn::VarStore {
        &mut self.vs
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }
}
