//! 18-layer residual encoder with coordinate convolutions on the four skip
//! outputs and the bottleneck.

use tch::{nn, nn::Module, Device, Tensor};

use super::coordconv::CoordConv;
use super::init;
use super::{FeaturePyramid, ModelConfig, PYRAMID_CHANNELS};

const INPUT_MEAN: f64 = 0.45;
const INPUT_STD: f64 = 0.225;

fn conv(p: nn::Path, c_in: i64, c_out: i64, k: i64, stride: i64, padding: i64) -> nn::Conv2D {
    let cfg = nn::ConvConfig {
        stride,
        padding,
        bias: false,
        ..Default::default()
    };
    nn::conv2d(p, c_in, c_out, k, cfg)
}

#[derive(Debug)]
struct BasicBlock {
    conv1: nn::Conv2D,
    bn1: nn::BatchNorm,
    conv2: nn::Conv2D,
    bn2: nn::BatchNorm,
    downsample: Option<(nn::Conv2D, nn::BatchNorm)>,
}

impl BasicBlock {
    fn new(p: nn::Path, c_in: i64, c_out: i64, stride: i64) -> Self {
        let downsample = (stride != 1 || c_in != c_out).then(|| {
            (
                conv(&p / "downsample" / "0", c_in, c_out, 1, stride, 0),
                nn::batch_norm2d(&p / "downsample" / "1", c_out, Default::default()),
            )
        });
        BasicBlock {
            conv1: conv(&p / "conv1", c_in, c_out, 3, stride, 1),
            bn1: nn::batch_norm2d(&p / "bn1", c_out, Default::default()),
            conv2: conv(&p / "conv2", c_out, c_out, 3, 1, 1),
            bn2: nn::batch_norm2d(&p / "bn2", c_out, Default::default()),
            downsample,
        }
    }

    fn forward_t(&self, x: &Tensor, train: bool) -> Tensor {
        let y = x
            .apply(&self.conv1)
            .apply_t(&self.bn1, train)
            .relu()
            .apply(&self.conv2)
            .apply_t(&self.bn2, train);
        let identity = match &self.downsample {
            Some((c, bn)) => x.apply(c).apply_t(bn, train),
            None => x.shallow_clone(),
        };
        (y + identity).relu()
    }
}

#[derive(Debug)]
struct EncoderNet {
    conv1: nn::Conv2D,
    bn1: nn::BatchNorm,
    stages: Vec<Vec<BasicBlock>>,
    coord: Vec<CoordConv>,
}

impl EncoderNet {
    fn new(p: &nn::Path, cfg: &ModelConfig) -> Self {
        let mut stages = Vec::new();
        for (idx, pair) in PYRAMID_CHANNELS.windows(2).enumerate() {
            let (c_in, c_out) = (pair[0], pair[1]);
            let stride = if idx == 0 { 1 } else { 2 };
            let sp = p / format!("layer{}", idx + 1);
            stages.push(vec![
                BasicBlock::new(&sp / "0", c_in, c_out, stride),
                BasicBlock::new(&sp / "1", c_out, c_out, 1),
            ]);
        }
        let coord = PYRAMID_CHANNELS
            .iter()
            .enumerate()
            .map(|(i, &c)| CoordConv::new(p / "coord" / i, c, c, cfg.coordconv_kernel))
            .collect();
        EncoderNet {
            conv1: conv(p / "conv1", 3, 64, 7, 2, 3),
            bn1: nn::batch_norm2d(p / "bn1", 64, Default::default()),
            stages,
            coord,
        }
    }

    fn forward_t(&self, img: &Tensor, train: bool) -> FeaturePyramid {
        let x = (img - INPUT_MEAN) / INPUT_STD;
        let mut raw = Vec::with_capacity(5);
        let mut x = x.apply(&self.conv1).apply_t(&self.bn1, train).relu();
        raw.push(x.shallow_clone());
        x = x.max_pool2d([3, 3], [2, 2], [1, 1], [1, 1], false);
        for stage in &self.stages {
            for block in stage {
                x = block.forward_t(&x, train);
            }
            raw.push(x.shallow_clone());
        }
        let levels = raw
            .iter()
            .zip(&self.coord)
            .map(|(f, cc)| cc.forward(f))
            .collect();
        FeaturePyramid::new(levels)
    }
}

/// Image encoder (F_S for the synthetic domain, F_R once adapted).
#[derive(Debug)]
pub struct Encoder {
    vs: nn::VarStore,
    net: EncoderNet,
    config: ModelConfig,
}

impl Encoder {
    pub fn new(config: &ModelConfig, seed: u64) -> Self {
        let vs = nn::VarStore::new(Device::Cpu);
        let net = EncoderNet::new(&vs.root(), config);
        init::initialize(&vs, seed, init::default_rule);
        Encoder {
            vs,
            net,
            config: config.clone(),
        }
    }

    /// `train` selects batch statistics (and running-stat updates) in the
    /// batch-norm layers; eval mode is fully deterministic.
    pub fn forward(&self, img: &Tensor, train: bool) -> FeaturePyramid {
        self.net.forward_t(img, train)
    }

    /// Deep copy with independent storage: updates to the clone never reach
    /// `self`.
    pub fn clone_encoder(&self) -> Encoder {
        let mut vs = nn::VarStore::new(Device::Cpu);
        let net = EncoderNet::new(&vs.root(), &self.config);
        vs.copy(&self.vs).expect("identical layout");
        Encoder {
            vs,
            net,
            config: self.config.clone(),
        }
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
