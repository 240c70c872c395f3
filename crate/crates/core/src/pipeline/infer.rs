//! Loading trained models for prediction and routing images to the encoder
//! that matches their domain.

use tch::Tensor;

use super::checkpoint::{
    Checkpoint, TrainingStep, ROLE_DECODER, ROLE_ENCODER_REAL, ROLE_ENCODER_SYNTHETIC,
};
use crate::error::{ensure, Result};
use crate::networks::{Decoder, Encoder};
use crate::synthdata::Domain;

/// Frozen encoder + decoder in evaluation mode.
pub struct DepthModel {
    encoder: Encoder,
    decoder: Decoder,
    encoder_role: &'static str,
}

impl DepthModel {
    pub fn from_parts(encoder: Encoder, decoder: Decoder, encoder_role: &'static str) -> Self {
        let mut m = DepthModel {
            encoder,
            decoder,
            encoder_role,
        };
        m.encoder.var_store_mut().freeze();
        m.decoder.var_store_mut().freeze();
        m
    }

    /// Synthetic images always go through the synthetic encoder; real images
    /// need an adapted checkpoint.
    pub fn for_domain(ckpt: &Checkpoint, domain: Domain) -> Result<Self> {
        let step = ckpt.manifest().step;
        let role = match domain {
            Domain::Synthetic => ROLE_ENCODER_SYNTHETIC,
            Domain::RealLike => {
                ensure!(
                    step == TrainingStep::Adapted,
                    Config,
                    "checkpoint {} is from supervised training; real-domain inference needs an adapted checkpoint",
                    ckpt.dir().display()
                );
                ROLE_ENCODER_REAL
            }
        };
        Self::load(ckpt, role)
    }

    /// The model a checkpoint stands for: the synthetic encoder after
    /// supervised training, the adapted encoder after adaptation. This is
    /// what a comparison of "vanilla" against "adapted" evaluates.
    pub fn primary(ckpt: &Checkpoint) -> Result<Self> {
        let role = match ckpt.manifest().step {
            TrainingStep::Supervised => ROLE_ENCODER_SYNTHETIC,
            TrainingStep::Adapted => ROLE_ENCODER_REAL,
        };
        Self::load(ckpt, role)
    }

    fn load(ckpt: &Checkpoint, role: &'static str) -> Result<Self> {
        let cfg = &ckpt.manifest().model;
        let mut encoder = Encoder::new(cfg, 0);
        let mut decoder = Decoder::new(cfg, 0);
        ckpt.load_weights(role, encoder.var_store_mut())?;
        ckpt.load_weights(ROLE_DECODER, decoder.var_store_mut())?;
        Ok(Self::from_parts(encoder, decoder, role))
    }

    pub fn encoder_role(&self) -> &'static str {
        self.encoder_role
    }

    pub fn input_size(&self) -> i64 {
        self.encoder.config().input_size
    }

    /// Full-resolution depth (mm) and confidence for a `[B, 3, H, W]` batch.
    pub fn predict(&self, images: &Tensor) -> Result<(Tensor, Tensor)> {
        let size = images.size();
        ensure!(
            size.len() == 4 && size[1] == 3 && size[2] % 32 == 0 && size[3] % 32 == 0,
            Data,
            "expected [B, 3, H, W] with H and W multiples of 32, got {size:?}"
        );
        let out = tch::no_grad(|| self.decoder.forward(&self.encoder.forward(images, false)));
        let finest = out.into_finest();
        Ok((finest.depth, finest.confidence))
    }
}
