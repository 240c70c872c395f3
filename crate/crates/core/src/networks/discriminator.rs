//! Patch discriminators applied to the three deepest encoder levels.

use tch::{nn, nn::Module, Device, Tensor};

use super::init::{self, Init};
use super::{ModelConfig, ADVERSARIAL_CHANNELS};

const INSTANCE_NORM_EPS: f64 = 1e-5;

fn instance_norm(x: &Tensor) -> Tensor {
    Tensor::instance_norm(
        x,
        None::<Tensor>,
        None::<Tensor>,
        None::<Tensor>,
        None::<Tensor>,
        true,
        0.1,
        INSTANCE_NORM_EPS,
        false,
    )
}

/// conv(k4,s2) 64 -> conv(k4,s2) 128 + IN -> conv(k3) 256 + IN -> conv(k3) 512 + IN
/// -> conv(k3) 1, LeakyReLU between layers, raw logits out.
#[derive(Debug)]
pub struct PatchDiscriminator {
    convs: Vec<nn::Conv2D>,
    slope: f64,
}

impl PatchDiscriminator {
    pub fn new(p: nn::Path, channels_in: i64, k3_stride: i64, slope: f64) -> Self {
        let k4 = nn::ConvConfig {
            stride: 2,
            padding: 1,
            ..Default::default()
        };
        let k3 = nn::ConvConfig {
            stride: k3_stride,
            padding: 1,
            ..Default::default()
        };
        let layout = [
            (channels_in, 64, 4, k4),
            (64, 128, 4, k4),
            (128, 256, 3, k3),
            (256, 512, 3, k3),
            (512, 1, 3, k3),
        ];
        let convs = layout
            .iter()
            .enumerate()
            .map(|(i, &(c_in, c_out, k, cfg))| {
                nn::conv2d(&p / format!("conv{i}"), c_in, c_out, k, cfg)
            })
            .collect();
        PatchDiscriminator { convs, slope }
    }
}

impl Module for PatchDiscriminator {
    fn forward(&self, x: &Tensor) -> Tensor {
        let last = self.convs.len() - 1;
        let mut x = x.shallow_clone();
        for (i, conv) in self.convs.iter().enumerate() {
            x = x.apply(conv);
            if i == last {
                break;
            }
            if i > 0 {
                x = instance_norm(&x);
            }
            x = x.maximum(&(&x * self.slope));
        }
        x
    }
}

/// The three independent discriminators A^1..A^3 in one store.
#[derive(Debug)]
pub struct Discriminators {
    vs: nn::VarStore,
    nets: Vec<PatchDiscriminator>,
}

impl Discriminators {
    pub fn new(config: &ModelConfig, seed: u64) -> Self {
        let vs = nn::VarStore::new(Device::Cpu);
        let nets = ADVERSARIAL_CHANNELS
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                PatchDiscriminator::new(
                    vs.root() / format!("level{}", i + 1),
                    c,
                    config.disc_k3_stride,
                    config.leaky_slope,
                )
            })
            .collect();
        init::initialize(&vs, seed, |name, shape| match shape.len() {
            4 => Init::Normal(0.02),
            _ => init::default_rule(name, shape),
        });
        Discriminators { vs, nets }
    }

    /// Logits of discriminator `level` (0-based over the three adversarial levels).
    pub fn forward(&self, level: usize, features: &Tensor) -> Tensor {
        self.nets[level].forward(features)
    }

    pub fn levels(&self) -> usize {
        self.nets.len()
    }

    pub fn var_store(&self) -> &nn::VarStore {
        &self.vs
    }

    pub fn var_store_mut(&mut self) -> &mut nn::VarStore {
        &mut self.vs
    }
}
